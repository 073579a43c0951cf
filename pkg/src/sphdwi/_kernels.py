"""Voxel-loop kernels, numba-compiled with a pure-numpy fallback.

The backend is chosen by the SPHDWI_BACKEND environment variable:

* ``auto`` (default) - the faster measured path per kernel: jit for the
  per-voxel reference kernels, the BLAS-shaped numpy path for the ring
  reduction (dense products dominate it, and vendor BLAS beats scalar jit
  loops there at every size)
* ``numba``          - require numba everywhere, error if missing
* ``numpy``          - force the fallback path everywhere

Every public function also takes an explicit ``backend=`` override so the
two paths can be compared in one process. The large batched transforms are
not here on purpose: those are plain BLAS matrix products under any backend.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

_ENV_VAR = "SPHDWI_BACKEND"


def default_backend() -> str:
    """Backend selected by the environment (resolved at call time)."""
    choice = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"{_ENV_VAR} must be auto, numba or numpy, got {choice!r}")
    if choice == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    if choice == "numba" and not HAVE_NUMBA:
        raise RuntimeError(f"{_ENV_VAR}=numba but numba is not importable")
    return choice


def resolve_backend(backend: str | None, prefer: str = "numba") -> str:
    """Resolve an explicit override, the env flag, or the per-kernel default.

    ``prefer`` is the measured-faster backend for the calling kernel and only
    applies when the environment is left on ``auto``: the ring reduction runs
    faster through the BLAS-shaped numpy path, while the jit path is the
    default for the per-voxel reference kernels.
    """
    if backend is None:
        choice = os.environ.get(_ENV_VAR, "auto").strip().lower()
        if choice == "auto":
            if prefer == "numpy" or not HAVE_NUMBA:
                return "numpy"
            return "numba"
        return default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"backend must be numba or numpy, got {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    return backend


# ---------------------------------------------------------------------------
# per-voxel regularized normal-equations solve (the deliberately naive path)
# ---------------------------------------------------------------------------

def _naive_fit_numpy(basis, penalty, lam, signals):
    n, r = basis.shape
    nvox = signals.shape[1]
    bt = np.ascontiguousarray(basis.T)
    out = np.empty((r, nvox))
    for v in range(nvox):
        normal = bt @ basis + lam * np.diag(penalty)
        out[:, v] = np.linalg.solve(normal, bt @ signals[:, v])
    return out


def _naive_eval_numpy(basis, coeffs):
    n = basis.shape[0]
    nvox = coeffs.shape[1]
    out = np.empty((n, nvox))
    for v in range(nvox):
        out[:, v] = basis @ coeffs[:, v]
    return out


def _lsc_combine_numpy(resample, weights, bias, coeffs):
    s_out, s_in, klen = weights.shape
    m = resample.shape[0] // klen
    nvox = coeffs.shape[2]
    out = np.empty((s_out, m, nvox))
    # chunked so the (s_in, m*klen, chunk) intermediate stays small
    chunk = max(1, int(4_000_000 // max(1, m * klen * s_in)))
    for lo in range(0, nvox, chunk):
        hi = min(nvox, lo + chunk)
        sampled = np.matmul(resample, coeffs[:, :, lo:hi])  # (s_in, m*klen, c)
        sampled = sampled.reshape(s_in, m, klen, hi - lo)
        out[:, :, lo:hi] = np.einsum("osk,smkv->omv", weights, sampled)
    out += bias[:, None, None]
    return out


if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _naive_fit_numba(basis, penalty, lam, signals, out):  # pragma: no cover
        n, r = basis.shape
        bt = np.ascontiguousarray(basis.T)
        nvox = signals.shape[1]
        for v in range(nvox):
            normal = bt @ basis
            for j in range(r):
                normal[j, j] += lam * penalty[j]
            rhs = bt @ np.ascontiguousarray(signals[:, v])
            out[:, v] = np.linalg.solve(normal, rhs)

    @njit(cache=True, nogil=True)
    def _naive_eval_numba(basis, coeffs, out):  # pragma: no cover
        n, r = basis.shape
        nvox = coeffs.shape[1]
        for v in range(nvox):
            for i in range(n):
                acc = 0.0
                for j in range(r):
                    acc += basis[i, j] * coeffs[j, v]
                out[i, v] = acc

    @njit(cache=True, nogil=True)
    def _lsc_combine_numba(resample, weights, bias, coeffs, out):  # pragma: no cover
        # resample products run on BLAS (numba lowers 2-D @ to dgemm); only
        # the ring reduction is scalar. Chunked over voxels so the sampled
        # intermediate stays cache-sized.
        s_out, s_in, klen = weights.shape
        mk = resample.shape[0]
        m = mk // klen
        nvox = coeffs.shape[2]
        chunk = max(1, 4_000_000 // max(1, mk * s_in))
        sampled = np.empty((s_in, mk, chunk))
        for lo in range(0, nvox, chunk):
            hi = min(nvox, lo + chunk)
            width = hi - lo
            for s in range(s_in):
                sampled[s, :, :width] = resample @ np.ascontiguousarray(coeffs[s, :, lo:hi])
            for o in range(s_out):
                for i in range(m):
                    base = i * klen
                    for v in range(width):
                        val = bias[o]
                        for s in range(s_in):
                            for k in range(klen):
                                val += weights[o, s, k] * sampled[s, base + k, v]
                        out[o, i, lo + v] = val


def naive_fit(basis, penalty, lam, signals, backend: str | None = None) -> np.ndarray:
    """Solve (B^T B + lam diag(penalty)) c = B^T s per voxel, no reuse across voxels.

    basis: (N, R); signals: (N, V). Returns coefficients (R, V).
    """
    which = resolve_backend(backend)
    basis = np.ascontiguousarray(basis, dtype=np.float64)
    signals = np.ascontiguousarray(signals, dtype=np.float64)
    penalty = np.ascontiguousarray(penalty, dtype=np.float64)
    if which == "numpy":
        return _naive_fit_numpy(basis, penalty, float(lam), signals)
    out = np.empty((basis.shape[1], signals.shape[1]))
    _naive_fit_numba(basis, penalty, float(lam), signals, out)
    return out


def naive_eval(basis, coeffs, backend: str | None = None) -> np.ndarray:
    """Evaluate s = B c per voxel. basis: (N, R); coeffs: (R, V) -> (N, V)."""
    which = resolve_backend(backend)
    basis = np.ascontiguousarray(basis, dtype=np.float64)
    coeffs = np.ascontiguousarray(coeffs, dtype=np.float64)
    if which == "numpy":
        return _naive_eval_numpy(basis, coeffs)
    out = np.empty((basis.shape[0], coeffs.shape[1]))
    _naive_eval_numba(basis, coeffs, out)
    return out


def lsc_combine(resample, weights, bias, coeffs, backend: str | None = None) -> np.ndarray:
    """Fused resample + ring-kernel reduction of one coefficient batch.

    resample: (m*K, R_in) row blocks per origin; weights: (S_out, S_in, K);
    bias: (S_out,); coeffs: (S_in, R_in, V). Returns origin values
    (S_out, m, V) where entry [o, i, v] = bias[o] + sum_{s,k} w[o,s,k] *
    (resample row i*K+k . coeffs[s,:,v]).
    """
    which = resolve_backend(backend, prefer="numpy")
    resample = np.ascontiguousarray(resample, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    bias = np.ascontiguousarray(bias, dtype=np.float64)
    coeffs = np.ascontiguousarray(coeffs, dtype=np.float64)
    if which == "numpy":
        return _lsc_combine_numpy(resample, weights, bias, coeffs)
    s_out, _, klen = weights.shape
    m = resample.shape[0] // klen
    out = np.empty((s_out, m, coeffs.shape[2]))
    _lsc_combine_numba(resample, weights, bias, coeffs, out)
    return out


def warm_up() -> str:
    """Trigger jit compilation of all kernels; returns the active backend."""
    which = default_backend()
    basis = np.eye(3, 2)
    naive_fit(basis, np.zeros(2), 0.0, np.ones((3, 1)), backend=which)
    naive_eval(basis, np.ones((2, 1)), backend=which)
    lsc_combine(np.ones((4, 2)), np.full((1, 1, 2), 0.5), np.zeros(1), np.ones((1, 2, 1)), backend=which)
    return which
