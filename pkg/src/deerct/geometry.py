"""Synthetic phantoms and the parallel-beam forward projector."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .interp import fov_mask, radon_operator, view_backprojector

# Modified (Toft) Shepp-Logan: intensity, semi-axis x, semi-axis y, centre x, centre y, angle (deg).
# Coordinates are in units of the half image width with y pointing up.
SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)

_SUPERSAMPLE = 4


@dataclass(frozen=True)
class Ellipse:
    center: tuple[float, float]
    axes: tuple[float, float]
    angle: float  # radians
    intensity: float  # additive


@dataclass
class PhantomSpec:
    kind: str = "random-ellipses"
    seed: int = 0
    ellipses: list[Ellipse] | None = None

    def resolved(self) -> list[Ellipse]:
        if self.ellipses is not None:
            return list(self.ellipses)
        if self.kind == "shepp-logan":
            return [Ellipse((x0, y0), (a, b), np.deg2rad(phi), amp) for amp, a, b, x0, y0, phi in SHEPP_LOGAN]
        if self.kind == "random-ellipses":
            return random_ellipses(self.seed)
        raise ValueError(f"unknown phantom kind {self.kind!r}")


@dataclass
class Image:
    data: np.ndarray
    pixel_size: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 2 or self.data.shape[0] != self.data.shape[1]:
            raise ValueError(f"image must be square, got shape {self.data.shape}")
        if self.n < 8:
            raise ValueError(f"image side must be >= 8, got {self.n}")

    @property
    def n(self) -> int:
        return self.data.shape[0]


@dataclass
class Sinogram:
    angles: np.ndarray
    data: np.ndarray
    det_spacing: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64)
        self.data = np.asarray(self.data)
        if self.data.ndim != 2 or self.data.shape[0] != self.angles.size:
            raise ValueError(f"sinogram data {self.data.shape} does not match {self.angles.size} angles")
        check_angles(self.angles)

    @property
    def n_det(self) -> int:
        return self.data.shape[1]

    @property
    def n_views(self) -> int:
        return self.angles.size


def check_angles(angles: np.ndarray) -> None:
    if angles.size == 0:
        raise ValueError("at least one view angle is required")
    if angles[0] < 0 or angles[-1] >= np.pi:
        raise ValueError("view angles must lie in [0, pi)")
    if np.any(np.diff(angles) <= 0):
        raise ValueError("view angles must be strictly increasing")


def equispaced_angles(n_views: int) -> np.ndarray:
    if n_views < 1:
        raise ValueError(f"need at least one view, got {n_views}")
    return np.pi * np.arange(n_views) / n_views


def random_ellipses(seed: int) -> list[Ellipse]:
    """A body-like ellipse with a handful of inserts, all inside the FOV."""
    rng = np.random.default_rng(seed)
    out = []
    a, b = rng.uniform(0.55, 0.8, size=2)
    out.append(Ellipse(tuple(rng.uniform(-0.05, 0.05, size=2)), (a, b), rng.uniform(0, np.pi),
                       rng.uniform(0.3, 0.6)))
    for _ in range(rng.integers(3, 9)):
        r = rng.uniform(0, 0.45)
        phi = rng.uniform(0, 2 * np.pi)
        axes = tuple(rng.uniform(0.04, 0.22, size=2))
        out.append(Ellipse((r * np.cos(phi), r * np.sin(phi)), axes, rng.uniform(0, np.pi),
                           rng.uniform(-0.25, 0.4)))
    return out


def make_phantom(spec: PhantomSpec, n: int) -> Image:
    """Rasterise ``spec`` on an ``n x n`` grid (4x4 supersampled), clipped to [0, 1]."""
    if n < 8:
        raise ValueError(f"phantom side must be >= 8, got {n}")
    ellipses = spec.resolved()
    for e in ellipses:
        if e.axes[0] <= 0 or e.axes[1] <= 0:
            raise ValueError(f"ellipse axes must be positive, got {e.axes}")
    half = n / 2
    c = (n - 1) / 2
    offs = (np.arange(_SUPERSAMPLE) + 0.5) / _SUPERSAMPLE - 0.5
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64) - c
    img = np.zeros((n, n))
    for dy in offs:
        for dx in offs:
            u = (xx + dx) / half
            v = -(yy + dy) / half
            for e in ellipses:
                cs, sn = np.cos(e.angle), np.sin(e.angle)
                du, dv = u - e.center[0], v - e.center[1]
                p = (du * cs + dv * sn) / e.axes[0]
                q = (-du * sn + dv * cs) / e.axes[1]
                img += e.intensity * (p * p + q * q <= 1.0)
    img /= _SUPERSAMPLE ** 2
    img = np.clip(img, 0.0, 1.0) * fov_mask(n)
    return Image(img)


def project(images: np.ndarray, angles, n_det: int | None = None, det_spacing: float = 1.0) -> np.ndarray:
    """Line integrals of a stack ``(..., n, n)`` in pixel units; returns ``(..., views, n_det)``."""
    n = images.shape[-1]
    n_det = n if n_det is None else n_det
    if n_det < 1:
        raise ValueError(f"n_det must be >= 1, got {n_det}")
    angles = np.asarray(angles, dtype=np.float64)
    check_angles(angles)
    op = radon_operator(n, tuple(angles.tolist()), n_det, float(det_spacing))
    return op.apply(images)


def radon(img: Image, angles, n_det: int | None = None) -> Sinogram:
    """Parallel-beam Radon transform of ``img``; detector spacing equals the pixel size."""
    data = project(img.data, angles, n_det) * img.pixel_size
    return Sinogram(np.asarray(angles, dtype=np.float64), data, det_spacing=img.pixel_size)


def adjoint_check(img: Image, sino_weights: Sinogram, eps: float = 1e-12) -> float:
    """Relative mismatch between <R x, y> and <x, B y> where B is the unfiltered
    back-projection of the learned layer with all-ones line weights."""
    n = img.n
    angles = tuple(sino_weights.angles.tolist())
    lhs = float(np.sum(project(img.data, sino_weights.angles, sino_weights.n_det) * sino_weights.data))
    lines = np.repeat(sino_weights.data[..., None], n, axis=-1)
    bp = view_backprojector(n, angles, sino_weights.n_det).apply(lines)
    rhs = float(np.sum(img.data * bp))
    return abs(lhs - rhs) / max(abs(lhs), eps)
