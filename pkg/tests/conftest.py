import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240814)


def random_unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def fibonacci_sphere(n):
    """Deterministic, nearly uniform spread of n points on the sphere."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    phi = golden * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def reference_basis(dirs, order):
    """Independent real-basis oracle built on scipy's complex harmonics."""
    import scipy.special as sp

    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = dirs.shape[0]
    r = (order + 1) * (order + 2) // 2
    theta = np.arccos(np.clip(dirs[:, 2], -1.0, 1.0))
    phi = np.arctan2(dirs[:, 1], dirs[:, 0])
    out = np.empty((n, r))
    for l in range(0, order + 1, 2):
        for m in range(-l, l + 1):
            j = l * (l + 1) // 2 + m
            harm = sp.sph_harm_y(l, abs(m), theta, phi)
            if m < 0:
                out[:, j] = np.sqrt(2.0) * harm.real
            elif m == 0:
                out[:, j] = harm.real
            else:
                out[:, j] = np.sqrt(2.0) * harm.imag
    return out
