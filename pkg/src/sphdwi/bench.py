"""Benchmark: precomputed-operator batched transform vs naive per-voxel solves.

The naive path re-forms and solves the regularized normal equations from
scratch for every voxel (no factorization reuse); it doubles as the
correctness oracle for the batched path. Timings are medians over repeats
with one untimed warm-up per configuration and BLAS pinned to one thread
for fairness. Two measurement-hygiene rules keep the speedup-vs-volume
curve about the algorithm instead of the machine: the CPU data caches are
scrubbed before every timed run (small volumes must not be timed cache-hot),
and batched runs write into a reused output buffer (fresh multi-hundred-MB
allocations would otherwise spend most of their time in kernel page zeroing,
a cost that vanishes in any pipeline that transforms more than one volume).
CSV columns are fixed: direction,order,voxels,method,seconds,max_dev.
"""

from __future__ import annotations

import io
import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .directions import unit_sphere_directions
from .errors import IllPosedFitError
from .fitting import (
    COND_LIMIT,
    DwiVolume,
    ShVolume,
    _apply_channel_matrix,
    make_fit_operator,
    sh_to_signal,
    signal_to_sh,
)
from .phantom import _bandlimited_coeffs
from .shcore import ShBasisSpec, coeff_count, eval_basis, laplace_beltrami_diag

CSV_HEADER = "direction,order,voxels,method,seconds,max_dev"


@dataclass(frozen=True)
class BenchRow:
    direction: str
    order: int
    voxels: int
    method: str
    seconds: float
    max_dev: float

    def as_csv(self) -> str:
        return (
            f"{self.direction},{self.order},{self.voxels},{self.method},"
            f"{self.seconds:.6f},{self.max_dev:.3e}"
        )


@dataclass
class BenchReport:
    rows: list[BenchRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for row in self.rows:
            buf.write(row.as_csv() + "\n")
        return buf.getvalue()

    def row(self, direction: str, order: int, method: str) -> BenchRow:
        for r in self.rows:
            if (r.direction, r.order, r.method) == (direction, order, method):
                return r
        raise KeyError(f"no row ({direction}, {order}, {method})")

    def speedup(self, direction: str, order: int) -> float:
        return (
            self.row(direction, order, "naive").seconds
            / self.row(direction, order, "batched").seconds
        )


@contextmanager
def _single_thread_blas():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        yield
        return
    with threadpool_limits(limits=1):
        yield


def _validate_like_batched(gradients, order: int, lb_lambda: float) -> np.ndarray:
    """Same pre-checks as make_fit_operator so both paths fail identically."""
    n = gradients.shape[0]
    r = coeff_count(order)
    if lb_lambda == 0.0 and n < r:
        raise IllPosedFitError(
            f"unregularized fit needs at least R = {r} directions, got N = {n} (cond = inf)"
        )
    basis = eval_basis(gradients, order)
    normal = basis.T @ basis + lb_lambda * np.diag(laplace_beltrami_diag(order))
    cond = float(np.linalg.cond(normal))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise IllPosedFitError(
            f"fit system is numerically rank deficient "
            f"(N = {n}, R = {r}, cond = {cond:.3e})"
        )
    return basis


def naive_signal_to_sh(
    vol: DwiVolume,
    gradients,
    order: int,
    lb_lambda: float = 0.0,
    backend: str | None = None,
) -> ShVolume:
    """Per-voxel reference fit: solve the normal equations voxel by voxel."""
    from .shcore import as_unit_directions

    dirs = as_unit_directions(gradients)
    basis = _validate_like_batched(dirs, order, lb_lambda)
    penalty = laplace_beltrami_diag(order)
    n = dirs.shape[0]
    subjects = vol.data.shape[0]
    grid = vol.data.shape[2:]
    nvox = int(np.prod(grid))
    r = coeff_count(order)
    stacked = vol.data.reshape(subjects, vol.shells, n, nvox)
    out = np.empty((subjects, vol.shells, r, nvox))
    for b in range(subjects):
        for s in range(vol.shells):
            out[b, s] = _kernels.naive_fit(basis, penalty, lb_lambda, stacked[b, s], backend=backend)
    return ShVolume(
        data=out.reshape(subjects, vol.shells * r, *grid),
        basis_spec=ShBasisSpec(order),
        shells=vol.shells,
    )


def naive_sh_to_signal(sh: ShVolume, gradients, backend: str | None = None) -> DwiVolume:
    """Per-voxel reference evaluation of an SH volume at target directions."""
    from .shcore import as_unit_directions

    dirs = as_unit_directions(gradients)
    basis = eval_basis(dirs, sh.basis_spec.order)
    subjects = sh.data.shape[0]
    grid = sh.data.shape[2:]
    nvox = int(np.prod(grid))
    r = sh.basis_spec.coeff_count
    stacked = sh.data.reshape(subjects, sh.shells, r, nvox)
    out = np.empty((subjects, sh.shells, dirs.shape[0], nvox))
    for b in range(subjects):
        for s in range(sh.shells):
            out[b, s] = _kernels.naive_eval(basis, stacked[b, s], backend=backend)
    return DwiVolume(data=out.reshape(subjects, sh.shells * dirs.shape[0], *grid), shells=sh.shells)


_scrub_buf = None


def _scrub_caches() -> None:
    """Push the input volume out of the CPU data caches before a timed run.

    Small volumes would otherwise be timed cache-hot, an advantage large
    volumes can never have; that masks the amortization effect the speedup
    sweep is meant to expose. A 256 MB read pass evicts stale lines (writes
    may use non-temporal stores and leave the cache alone). Code paths stay
    warm (one untimed warm-up run precedes the timed ones). The buffer is
    allocated on first use so importing the package stays cheap.
    """
    global _scrub_buf
    if _scrub_buf is None:
        _scrub_buf = np.ones(32 * 1024 * 1024)
    float(_scrub_buf.sum())


def _median_time(fn, repeats: int) -> float:
    fn()  # warm-up: page faults, jit, BLAS thread pools
    times = []
    for _ in range(repeats):
        _scrub_caches()
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _interleaved_median_times(fns: dict, repeats: int) -> dict:
    """Median timings with the competitors' repeats interleaved in one window.

    Host-load bursts on shared machines last seconds; timing method A's
    repeats and then method B's in disjoint windows lets one burst inflate a
    single method's median and corrupt the speedup ratio. Alternating the
    repeats exposes both methods to the same load profile.
    """
    for fn in fns.values():
        fn()  # warm-up
    samples = {name: [] for name in fns}
    for _ in range(repeats):
        for name, fn in fns.items():
            _scrub_caches()
            t0 = time.perf_counter()
            fn()
            samples[name].append(time.perf_counter() - t0)
    return {name: float(np.median(vals)) for name, vals in samples.items()}


def _synth_inputs(order: int, voxel_count: int, seed: int, n_dirs: int):
    rng = np.random.default_rng(seed)
    gradients = unit_sphere_directions(n_dirs)
    coeffs = _bandlimited_coeffs(rng, order, voxel_count)
    basis = eval_basis(gradients, order)
    signals = basis @ coeffs
    vol = DwiVolume(data=signals.reshape(1, n_dirs, voxel_count, 1, 1))
    shvol = ShVolume(
        data=coeffs.reshape(1, coeffs.shape[0], voxel_count, 1, 1),
        basis_spec=ShBasisSpec(order),
    )
    return gradients, vol, shvol


def _timed_batched_fit(vol, gradients, order, lb_lambda, out_buf, threads=1):
    """One batched signal->SH pass: operator build (the amortized cost) plus
    the matrix application, written into a reused buffer so allocator page
    zeroing does not pollute small-volume timings."""
    op = make_fit_operator(gradients, order, lb_lambda)
    stacked = vol.data.reshape(1, vol.shells, gradients.shape[0], -1)
    _apply_channel_matrix(op.fit_matrix, stacked, threads=threads, out=out_buf)


def _timed_batched_eval(shvol, gradients, out_buf, threads=1):
    basis = eval_basis(gradients, shvol.basis_spec.order)
    r = shvol.basis_spec.coeff_count
    stacked = shvol.data.reshape(1, shvol.shells, r, -1)
    _apply_channel_matrix(basis, stacked, threads=threads, out=out_buf)


def run_bench(
    orders,
    voxel_count: int,
    repeats: int = 3,
    seed: int = 0,
    lb_lambda: float = 0.006,
    n_dirs: int = 90,
    parallel_threads: int = 0,
    backend: str | None = None,
    compare_backends: bool = False,
) -> BenchReport:
    """Time batched vs naive transforms on seeded synthetic volumes.

    Emits one batched and one naive row per (direction, order). Batched
    timing includes operator construction, which is exactly the cost the
    precomputation amortizes over the volume. ``parallel_threads > 0`` adds
    rows for the voxel-parallel batched path under a separate method label;
    ``compare_backends`` adds naive rows for the non-active kernel backend.
    """
    if repeats < 3:
        raise ValueError(f"repeats must be >= 3, got {repeats}")
    if _kernels.resolve_backend(backend) == "numba":
        _kernels.warm_up()
    rows: list[BenchRow] = []
    for order in orders:
        gradients, vol, shvol = _synth_inputs(order, voxel_count, seed, n_dirs)
        r = coeff_count(order)
        fit_buf = np.empty((1, 1, r, voxel_count))
        eval_buf = np.empty((1, 1, n_dirs, voxel_count))

        with _single_thread_blas():
            fit_times = _interleaved_median_times(
                {
                    "batched": lambda: _timed_batched_fit(
                        vol, gradients, order, lb_lambda, fit_buf
                    ),
                    "naive": lambda: naive_signal_to_sh(
                        vol, gradients, order, lb_lambda, backend=backend
                    ),
                },
                repeats,
            )
        op = make_fit_operator(gradients, order, lb_lambda)
        fitted = signal_to_sh(vol, op)
        reference = naive_signal_to_sh(vol, gradients, order, lb_lambda, backend=backend)
        dev_fit = float(np.max(np.abs(fitted.data - reference.data)))
        assert np.array_equal(fit_buf.reshape(fitted.data.shape), fitted.data)
        rows.append(
            BenchRow("signal2sh", order, voxel_count, "batched", fit_times["batched"], dev_fit)
        )
        rows.append(
            BenchRow("signal2sh", order, voxel_count, "naive", fit_times["naive"], dev_fit)
        )

        with _single_thread_blas():
            eval_times = _interleaved_median_times(
                {
                    "batched": lambda: _timed_batched_eval(shvol, gradients, eval_buf),
                    "naive": lambda: naive_sh_to_signal(shvol, gradients, backend=backend),
                },
                repeats,
            )
        evaluated = sh_to_signal(shvol, gradients)
        reference_s = naive_sh_to_signal(shvol, gradients, backend=backend)
        dev_eval = float(np.max(np.abs(evaluated.data - reference_s.data)))
        rows.append(
            BenchRow("sh2signal", order, voxel_count, "batched", eval_times["batched"], dev_eval)
        )
        rows.append(
            BenchRow("sh2signal", order, voxel_count, "naive", eval_times["naive"], dev_eval)
        )

        if parallel_threads > 0:
            t_par = _median_time(
                lambda: _timed_batched_fit(
                    vol, gradients, order, lb_lambda, fit_buf, threads=parallel_threads
                ),
                repeats,
            )
            par = signal_to_sh(vol, op, threads=parallel_threads)
            dev_par = float(np.max(np.abs(par.data - reference.data)))
            rows.append(
                BenchRow("signal2sh", order, voxel_count, "batched-parallel", t_par, dev_par)
            )

        if compare_backends:
            active = _kernels.resolve_backend(backend)
            other = "numpy" if active == "numba" else "numba"
            if other == "numpy" or _kernels.HAVE_NUMBA:
                if other == "numba":
                    _kernels.warm_up()
                with _single_thread_blas():
                    t_other = _median_time(
                        lambda: naive_signal_to_sh(vol, gradients, order, lb_lambda, backend=other),
                        repeats,
                    )
                ref_other = naive_signal_to_sh(vol, gradients, order, lb_lambda, backend=other)
                dev_other = float(np.max(np.abs(fitted.data - ref_other.data)))
                rows.append(
                    BenchRow(
                        "signal2sh", order, voxel_count, f"naive-{other}", t_other, dev_other
                    )
                )
    return BenchReport(rows=rows)
