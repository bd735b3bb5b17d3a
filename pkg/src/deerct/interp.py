"""Bilinear resampling operators stored as sparse matrices.

Geometry conventions (pixel units, origin at the image centre ``(n-1)/2``):

* pixel ``(row, col)`` sits at ``x = col - c``, ``y = row - c``;
* a view at angle ``theta`` has detector axis ``s = x cos + y sin`` and ray
  axis ``t = -x sin + y cos``;
* samples falling outside a grid read as zero;
* the field of view is the inscribed disc of radius ``n / 2``.

Every operator is a fixed linear map, so its adjoint is the matrix transpose.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp


@dataclass(eq=False)
class SparseOperator:
    name: str
    matrix: sp.csr_matrix
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    _cast: dict = field(default_factory=dict, repr=False)

    def matrix_as(self, dtype) -> sp.csr_matrix:
        dtype = np.dtype(dtype)
        if dtype == self.matrix.dtype:
            return self.matrix
        if dtype not in self._cast:
            self._cast[dtype] = self.matrix.astype(dtype)
        return self._cast[dtype]

    def apply(self, x: np.ndarray) -> np.ndarray:
        k = len(self.in_shape)
        lead = x.shape[:-k]
        flat = x.reshape(-1, int(np.prod(self.in_shape)))
        out = self.matrix_as(x.dtype) @ flat.T
        return np.asarray(out.T).reshape(lead + self.out_shape)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        k = len(self.out_shape)
        lead = y.shape[:-k]
        flat = y.reshape(-1, int(np.prod(self.out_shape)))
        out = self.matrix_as(y.dtype).T @ flat.T
        return np.asarray(out.T).reshape(lead + self.in_shape)


def fov_mask(n: int) -> np.ndarray:
    c = (n - 1) / 2
    yy, xx = np.mgrid[0:n, 0:n] - c
    return (xx ** 2 + yy ** 2) <= (n / 2) ** 2


def bilinear_weights(rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]):
    """Corner indices and weights for bilinear sampling of a ``shape`` grid.

    Returns ``(point, flat_pixel, weight)`` triplets; out-of-grid corners are
    dropped, which is the zero boundary condition.
    """
    rows = np.asarray(rows, dtype=np.float64).ravel()
    cols = np.asarray(cols, dtype=np.float64).ravel()
    h, w = shape
    r0 = np.floor(rows)
    c0 = np.floor(cols)
    fr = rows - r0
    fc = cols - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)
    point = np.arange(rows.size)
    pts, idx, wts = [], [], []
    for dr, dc, wt in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                       (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
        rr = r0 + dr
        cc = c0 + dc
        ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w) & (wt != 0)
        pts.append(point[ok])
        idx.append(rr[ok] * w + cc[ok])
        wts.append(wt[ok])
    return np.concatenate(pts), np.concatenate(idx), np.concatenate(wts)


def _pixel_coords(n: int):
    c = (n - 1) / 2
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64) - c
    return xx.ravel(), yy.ravel()


@lru_cache(maxsize=64)
def rotation_operator(n: int, angle: float) -> SparseOperator:
    """Rotate an ``n x n`` image by ``angle`` (inverse mapping, bilinear)."""
    x, y = _pixel_coords(n)
    c = (n - 1) / 2
    cs, sn = np.cos(angle), np.sin(angle)
    src_x = x * cs + y * sn
    src_y = -x * sn + y * cs
    p, q, w = bilinear_weights(src_y + c, src_x + c, (n, n))
    m = sp.csr_matrix((w, (p, q)), shape=(n * n, n * n))
    return SparseOperator(f"rotate({angle:.6g})", m, (n, n), (n, n))


@lru_cache(maxsize=16)
def view_backprojector(n: int, angles: tuple[float, ...], n_det: int, det_spacing: float = 1.0) -> SparseOperator:
    """Rotate a stack of per-view line images onto the image grid and sum them.

    Input layout is ``(views, n_det, n)``: detector position by position along
    the ray.  Each output pixel reads its view image at ``(s, t)`` through the
    bilinear kernel.  The ray coordinate is clamped to the line's sample range,
    so pixels on the FOV rim (|t| up to n/2) take the end sample instead of
    losing weight.  Pixels outside the field of view receive nothing.  No
    angular weighting is applied here.
    """
    x, y = _pixel_coords(n)
    inside = fov_mask(n).ravel()
    x, y = x[inside], y[inside]
    pix = np.flatnonzero(inside)
    block = n_det * n
    rows, cols, vals = [], [], []
    for v, th in enumerate(angles):
        s = x * np.cos(th) + y * np.sin(th)
        t = -x * np.sin(th) + y * np.cos(th)
        t = np.clip(t + (n - 1) / 2, 0.0, n - 1.0)
        p, q, w = bilinear_weights(s / det_spacing + (n_det - 1) / 2, t, (n_det, n))
        rows.append(pix[p])
        cols.append(q + v * block)
        vals.append(w)
    m = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n * n, len(angles) * block))
    return SparseOperator("backproject_views", m, (len(angles), n_det, n), (n, n))


@lru_cache(maxsize=16)
def radon_operator(n: int, angles: tuple[float, ...], n_det: int, det_spacing: float = 1.0,
                   step: float = 0.5) -> SparseOperator:
    """Parallel-beam projector: interpolated ray marching at ``step`` pixels.

    Each ray sample reads the image bilinearly; the sum is scaled by the step
    length so entries approximate line integrals in pixel units.
    """
    c = (n - 1) / 2
    half = n / 2 + 1.0
    k = int(np.ceil(half / step))
    t = step * np.arange(-k, k + 1)
    s = det_spacing * (np.arange(n_det) - (n_det - 1) / 2)
    keep = fov_mask(n).ravel()
    blocks = []
    for th in angles:
        cs, sn = np.cos(th), np.sin(th)
        xs = s[:, None] * cs - t[None, :] * sn
        ys = s[:, None] * sn + t[None, :] * cs
        p, q, w = bilinear_weights(ys + c, xs + c, (n, n))
        ray = p // t.size
        ok = keep[q]
        blocks.append(sp.csr_matrix((w[ok] * step, (ray[ok], q[ok])), shape=(n_det, n * n)))
    m = sp.vstack(blocks, format="csr")
    m.sum_duplicates()
    return SparseOperator("radon", m, (n, n), (len(angles), n_det))
