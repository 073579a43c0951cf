"""Local spherical convolution over SH-resampled ring neighborhoods.

For every origin direction, concentric rings of resampled points are placed
at angular distances alpha, 2*alpha, ... (ring r holding kernel_sizes[r-1]
points). Each voxel's coefficients are resampled onto origin + rings, the
ring kernel is applied without reflection (cross-correlation semantics, as
in deep-learning convolutions), and the resulting per-origin scalars are
refit to SH at the requested output order. Kernels carry input/output shell
channels so multi-shell signals mix explicitly.
"""

from __future__ import annotations

import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels, dwio
from .errors import KernelMismatchError, ShapeError
from .fitting import FitOperator, ShVolume, _apply_channel_matrix, make_fit_operator
from .shcore import ShBasisSpec, as_unit_directions, eval_basis, ring_directions

KERNEL_JSON_FIELDS = ("shells_in", "shells_out", "kernel_sizes", "angular_distance", "weights", "bias")


@dataclass(frozen=True)
class LscKernel:
    """Ring-kernel weights (shells_out, shells_in, K) and per-output bias."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        b = np.ascontiguousarray(np.asarray(self.bias, dtype=np.float64))
        if w.ndim != 3:
            raise ShapeError(f"kernel weights must be (shells_out, shells_in, K), got {w.shape}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"bias must have one entry per output shell, got {b.shape}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ShapeError("kernel contains non-finite entries")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def shells_out(self) -> int:
        return self.weights.shape[0]

    @property
    def shells_in(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_len(self) -> int:
        return self.weights.shape[2]


@dataclass(frozen=True)
class LscGeometry:
    """Resampling geometry and output-side refit for one origin set."""

    origins: np.ndarray             # (m, 3)
    alpha: float
    kernel_sizes: tuple[int, ...]
    order_in: int
    rings: tuple[np.ndarray, ...]   # ring r: (m, kernel_sizes[r], 3)
    resample_matrix: np.ndarray     # (m * K, R_in)
    refit: FitOperator

    @property
    def m(self) -> int:
        return int(self.origins.shape[0])

    @property
    def kernel_len(self) -> int:
        return 1 + sum(self.kernel_sizes)

    @property
    def order_out(self) -> int:
        return self.refit.basis_spec.order


def build_lsc_geometry(
    gradients,
    kernel_sizes,
    alpha: float,
    order_in: int,
    order_out: int,
    lb_lambda: float = 0.0,
) -> LscGeometry:
    """Place rings, assemble the resample matrix and build the refit operator.

    Ring r (1-based) sits at angular distance r * alpha and holds
    kernel_sizes[r-1] points; rows of the resample matrix are blocked per
    origin as [origin, ring-1 points in phase order, ring-2 points, ...].
    """
    origins = as_unit_directions(gradients)
    sizes = tuple(int(s) for s in kernel_sizes)
    if not sizes or any(s < 1 for s in sizes):
        raise ValueError(f"kernel_sizes must be non-empty positive integers, got {kernel_sizes}")
    if alpha <= 0.0 or alpha * len(sizes) >= np.pi / 2.0:
        raise ValueError(
            f"rings must stay inside the hemisphere: need 0 < alpha and "
            f"alpha * {len(sizes)} < pi/2, got alpha = {alpha}"
        )
    m = origins.shape[0]
    klen = 1 + sum(sizes)

    rings: list[np.ndarray] = []
    for r, npts in enumerate(sizes, start=1):
        ring_r = np.stack([ring_directions(u, r * alpha, npts) for u in origins])
        rings.append(ring_r)

    all_dirs = np.empty((m * klen, 3))
    for i in range(m):
        block = [origins[i : i + 1]]
        block.extend(ring[i] for ring in rings)
        all_dirs[i * klen : (i + 1) * klen] = np.concatenate(block, axis=0)

    resample = eval_basis(all_dirs, order_in)
    refit = make_fit_operator(origins, order_out, lb_lambda)
    resample.setflags(write=False)
    return LscGeometry(
        origins=origins,
        alpha=float(alpha),
        kernel_sizes=sizes,
        order_in=order_in,
        rings=tuple(rings),
        resample_matrix=resample,
        refit=refit,
    )


def make_moving_average_kernel(kernel_sizes, shells_in: int = 1, shells_out: int = 1) -> LscKernel:
    """Uniform kernel: every weight 1 / (shells_in * K), bias zero."""
    sizes = tuple(int(s) for s in kernel_sizes)
    if not sizes or any(s < 1 for s in sizes):
        raise ValueError(f"kernel_sizes must be non-empty positive integers, got {kernel_sizes}")
    klen = 1 + sum(sizes)
    weights = np.full((shells_out, shells_in, klen), 1.0 / (shells_in * klen))
    return LscKernel(weights=weights, bias=np.zeros(shells_out))


def make_identity_kernel(kernel_sizes, shells: int = 1) -> LscKernel:
    """Kernel that keeps each shell's origin sample and ignores the rings."""
    sizes = tuple(int(s) for s in kernel_sizes)
    klen = 1 + sum(sizes)
    weights = np.zeros((shells, shells, klen))
    for s in range(shells):
        weights[s, s, 0] = 1.0
    return LscKernel(weights=weights, bias=np.zeros(shells))


def lsc_forward(
    sh_in: ShVolume,
    kernel: LscKernel,
    geom: LscGeometry,
    threads: int = 1,
    backend: str | None = None,
) -> ShVolume:
    """Apply a local spherical convolution to an SH volume.

    Per voxel and input shell the coefficients are resampled onto the
    origin+ring points, reduced with the kernel (one scalar per origin and
    output shell), and the origin scalars are refit to SH at the geometry's
    output order.
    """
    if sh_in.basis_spec.order != geom.order_in:
        raise ShapeError(
            f"SH input order {sh_in.basis_spec.order} does not match "
            f"geometry input order {geom.order_in}"
        )
    if kernel.shells_in != sh_in.shells:
        raise ShapeError(
            f"kernel expects {kernel.shells_in} input shells, volume has {sh_in.shells}"
        )
    if kernel.kernel_len != geom.kernel_len:
        raise KernelMismatchError(
            f"kernel length K = {kernel.kernel_len} does not match "
            f"geometry K = {geom.kernel_len}"
        )

    subjects = sh_in.data.shape[0]
    grid = sh_in.data.shape[2:]
    nvox = int(np.prod(grid))
    r_in = sh_in.basis_spec.coeff_count
    r_out = geom.refit.basis_spec.coeff_count
    out = np.empty((subjects, kernel.shells_out * r_out, *grid))

    stacked = sh_in.data.reshape(subjects, sh_in.shells, r_in, nvox)
    for b in range(subjects):
        origin_vals = _combine_threaded(geom, kernel, stacked[b], threads, backend)
        coeffs = _apply_channel_matrix(geom.refit.fit_matrix, origin_vals[None], threads)[0]
        out[b] = coeffs.reshape(kernel.shells_out * r_out, *grid)
    return ShVolume(data=out, basis_spec=ShBasisSpec(geom.order_out), shells=kernel.shells_out)


def _combine_threaded(geom, kernel, coeffs, threads, backend):
    if threads <= 1 or coeffs.shape[2] < 2 * threads:
        return _kernels.lsc_combine(
            geom.resample_matrix, kernel.weights, kernel.bias, coeffs, backend=backend
        )
    nvox = coeffs.shape[2]
    out = np.empty((kernel.shells_out, geom.m, nvox))
    bounds = np.linspace(0, nvox, threads + 1, dtype=int)
    spans = [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]

    def run(span):
        lo, hi = span
        out[:, :, lo:hi] = _kernels.lsc_combine(
            geom.resample_matrix, kernel.weights, kernel.bias, coeffs[:, :, lo:hi], backend=backend
        )

    with ThreadPoolExecutor(max_workers=len(spans)) as pool:
        list(pool.map(run, spans))
    return out


def save_kernel_json(path: str, kernel: LscKernel, kernel_sizes, angular_distance: float) -> None:
    """Serialize a kernel with its ring layout to the interchange JSON format."""
    sizes = [int(s) for s in kernel_sizes]
    if kernel.kernel_len != 1 + sum(sizes):
        raise KernelMismatchError(
            f"kernel length K = {kernel.kernel_len} does not match "
            f"kernel_sizes K = {1 + sum(sizes)}"
        )
    doc = {
        "shells_in": kernel.shells_in,
        "shells_out": kernel.shells_out,
        "kernel_sizes": sizes,
        "angular_distance": float(angular_distance),
        "weights": kernel.weights.tolist(),
        "bias": kernel.bias.tolist(),
    }
    dirname = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(prefix=".sphdwi-", suffix=".json", dir=dirname)
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        dwio._apply_umask(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_kernel_json(path: str) -> tuple[LscKernel, tuple[int, ...], float]:
    """Read a kernel JSON document; returns (kernel, kernel_sizes, angular_distance)."""
    with open(path, "r") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise KernelMismatchError(f"{path}: not valid JSON ({exc})") from exc
    missing = [k for k in KERNEL_JSON_FIELDS if k not in doc]
    if missing:
        raise KernelMismatchError(f"{path}: missing fields {missing}")
    sizes = tuple(int(s) for s in doc["kernel_sizes"])
    weights = np.asarray(doc["weights"], dtype=np.float64)
    bias = np.asarray(doc["bias"], dtype=np.float64)
    if weights.ndim != 3 or weights.shape[:2] != (int(doc["shells_out"]), int(doc["shells_in"])):
        raise KernelMismatchError(
            f"{path}: weights shape {weights.shape} does not match declared shells "
            f"({doc['shells_out']} out, {doc['shells_in']} in)"
        )
    if weights.shape[2] != 1 + sum(sizes):
        raise KernelMismatchError(
            f"{path}: weights length K = {weights.shape[2]} does not match "
            f"kernel_sizes K = {1 + sum(sizes)}"
        )
    kernel = LscKernel(weights=weights, bias=bias)
    return kernel, sizes, float(doc["angular_distance"])
