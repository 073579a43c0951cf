"""Numba and numpy kernel backends must agree and honor the env flag."""

import numpy as np
import pytest

from sphdwi import _kernels
from sphdwi.shcore import eval_basis, laplace_beltrami_diag
from sphdwi.directions import unit_sphere_directions

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")


class TestBackendSelection:
    def test_env_flag_numpy(self, monkeypatch):
        monkeypatch.setenv("SPHDWI_BACKEND", "numpy")
        assert _kernels.default_backend() == "numpy"

    @needs_numba
    def test_env_flag_auto_prefers_numba(self, monkeypatch):
        monkeypatch.setenv("SPHDWI_BACKEND", "auto")
        assert _kernels.default_backend() == "numba"

    def test_env_flag_garbage_rejected(self, monkeypatch):
        monkeypatch.setenv("SPHDWI_BACKEND", "fortran")
        with pytest.raises(ValueError):
            _kernels.default_backend()

    def test_explicit_override_beats_env(self, monkeypatch):
        monkeypatch.setenv("SPHDWI_BACKEND", "numpy")
        assert _kernels.resolve_backend("numpy") == "numpy"

    def test_auto_honors_per_kernel_preference(self, monkeypatch):
        monkeypatch.setenv("SPHDWI_BACKEND", "auto")
        assert _kernels.resolve_backend(None, prefer="numpy") == "numpy"

    @needs_numba
    def test_forced_numba_overrides_preference(self, monkeypatch):
        monkeypatch.setenv("SPHDWI_BACKEND", "numba")
        assert _kernels.resolve_backend(None, prefer="numpy") == "numba"


@needs_numba
class TestBackendEquivalence:
    def test_naive_fit(self, rng):
        basis = eval_basis(unit_sphere_directions(30), 4)
        penalty = laplace_beltrami_diag(4)
        signals = rng.normal(size=(30, 50)) + 1.0
        a = _kernels.naive_fit(basis, penalty, 0.006, signals, backend="numpy")
        b = _kernels.naive_fit(basis, penalty, 0.006, signals, backend="numba")
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_naive_eval(self, rng):
        basis = eval_basis(unit_sphere_directions(30), 4)
        coeffs = rng.normal(size=(15, 40))
        a = _kernels.naive_eval(basis, coeffs, backend="numpy")
        b = _kernels.naive_eval(basis, coeffs, backend="numba")
        assert np.max(np.abs(a - b)) <= 1e-13

    def test_lsc_combine(self, rng):
        resample = rng.normal(size=(30 * 6, 15))
        weights = rng.normal(size=(2, 2, 6))
        bias = rng.normal(size=2)
        coeffs = rng.normal(size=(2, 15, 33))
        a = _kernels.lsc_combine(resample, weights, bias, coeffs, backend="numpy")
        b = _kernels.lsc_combine(resample, weights, bias, coeffs, backend="numba")
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_lsc_combine_chunk_boundaries(self, rng):
        # numpy fallback chunks internally; whole vs split must agree exactly
        resample = rng.normal(size=(10 * 3, 6))
        weights = rng.normal(size=(1, 1, 3))
        bias = np.zeros(1)
        coeffs = rng.normal(size=(1, 6, 97))
        whole = _kernels.lsc_combine(resample, weights, bias, coeffs, backend="numpy")
        parts = np.concatenate(
            [
                _kernels.lsc_combine(resample, weights, bias, coeffs[:, :, :41], backend="numpy"),
                _kernels.lsc_combine(resample, weights, bias, coeffs[:, :, 41:], backend="numpy"),
            ],
            axis=2,
        )
        assert np.array_equal(whole, parts)


class TestWarmUp:
    def test_warm_up_reports_backend(self):
        assert _kernels.warm_up() in ("numba", "numpy")
