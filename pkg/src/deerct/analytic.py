"""Fourier-domain filtering, filtered back-projection and the input pipeline
that turns a few-view sinogram into the learned stage's inputs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .geometry import Image, Sinogram, equispaced_angles, project
from .interp import view_backprojector

FILTER_KINDS = ("shepp-logan", "ramp", "none")


@dataclass
class FilterKernel:
    kind: str
    length: int
    response: np.ndarray


def padded_length(n_det: int) -> int:
    return int(2 ** np.ceil(np.log2(2 * n_det)))


def make_filter(kind: str, n_det: int, length: int | None = None, det_spacing: float = 1.0) -> FilterKernel:
    """Frequency response of a discrete reconstruction filter.

    The spatial closed form is sampled on the circular index grid of the
    padded FFT and transformed.  The DC bin is then the (tiny, positive) sum of
    the truncated kernel rather than an exact zero; zeroing it would shift
    reconstructions of compactly supported objects downwards.
    """
    if kind not in FILTER_KINDS:
        raise ValueError(f"unknown filter {kind!r}; expected one of {FILTER_KINDS}")
    length = padded_length(n_det) if length is None else int(length)
    if length < n_det:
        raise ValueError(f"filter length {length} shorter than detector count {n_det}")
    if kind == "none":
        return FilterKernel(kind, length, np.ones(length))
    k = np.fft.fftfreq(length, d=1.0 / length).astype(np.float64)
    if kind == "shepp-logan":
        h = -2.0 / (np.pi ** 2 * (4.0 * k ** 2 - 1.0))
    else:
        h = np.zeros(length)
        h[0] = 0.25
        odd = (k.astype(int) % 2) == 1
        h[odd] = -1.0 / (np.pi * k[odd]) ** 2
    resp = np.real(np.fft.fft(h)) / det_spacing
    return FilterKernel(kind, length, resp)


def filter_rows(data: np.ndarray, kernel: FilterKernel) -> np.ndarray:
    return T.fourier_filter(T.Tensor(data), kernel.response).data


def filter_sinogram(sino: Sinogram, kernel: FilterKernel) -> Sinogram:
    if kernel.length < sino.n_det:
        raise ValueError(f"filter length {kernel.length} shorter than detector count {sino.n_det}")
    return Sinogram(sino.angles, filter_rows(sino.data, kernel), sino.det_spacing, dict(sino.meta))


def backproject(q: T.Tensor, w: T.Tensor, angles, n: int, det_spacing: float = 1.0) -> T.Tensor:
    """Smear each sinogram sample along its ray with line weights ``w``,
    rotate every view image to its angle and sum, weighted by pi / views.

    ``q`` is a batch ``(B, V, D)``.  With ``w`` all ones this is classical
    (unfiltered) back-projection; with trainable ``w`` it is the learned layer.
    """
    angles = tuple(float(a) for a in np.asarray(angles).ravel())
    if q.ndim != 3 or q.shape[1] != len(angles):
        raise ValueError(f"backproject: sinogram batch {q.shape} does not match {len(angles)} angles")
    op = view_backprojector(n, angles, q.shape[2], float(det_spacing))
    lines = T.pointwise_linear(q, w)
    return T.linear_map(lines, op) * (np.pi / len(angles))


def fbp_array(filtered: np.ndarray, angles, n: int, det_spacing: float = 1.0) -> np.ndarray:
    """Back-project an already-filtered batch ``(B, V, D)``; returns ``(B, n, n)``."""
    q = T.Tensor(filtered)
    ones = T.Tensor(np.ones(n, dtype=q.dtype))
    return backproject(q, ones, angles, n, det_spacing).data


def fbp(sino: Sinogram, kernel: FilterKernel | None = None, n: int | None = None,
        pixel_size: float = 1.0) -> Image:
    """Filtered back-projection; pixels outside the inscribed FOV are zero."""
    if sino.data.size == 0:
        raise ValueError("cannot reconstruct an empty sinogram")
    n = sino.n_det if n is None else n
    if kernel is None:
        kernel = make_filter("shepp-logan", sino.n_det, det_spacing=sino.det_spacing)
    filtered = filter_rows(sino.data, kernel)
    img = fbp_array(filtered[None], sino.angles, n, sino.det_spacing / pixel_size)[0]
    return Image(img, pixel_size)


@dataclass
class PipelineProducts:
    fbp_image: Image
    dense_sino: Sinogram
    filtered_dense_sino: Sinogram


def prepare_arrays(fewview: np.ndarray, few_angles, n: int, nv_dense: int):
    """Batched pipeline on raw arrays ``(B, Vf, D)``.

    Returns ``(fbp_images, dense, filtered_dense)`` with shapes ``(B, n, n)``,
    ``(B, nv_dense, D)`` and ``(B, nv_dense, D)``.
    """
    n_det = fewview.shape[-1]
    sl = make_filter("shepp-logan", n_det)
    fbp_imgs = fbp_array(filter_rows(fewview, sl), few_angles, n)
    dense = project(fbp_imgs, equispaced_angles(nv_dense), n_det).astype(fewview.dtype)
    return fbp_imgs, dense, filter_rows(dense, sl)


def prepare_inputs(fewview: Sinogram, n: int | None = None, nv_dense: int | None = None) -> PipelineProducts:
    """Few-view FBP image, its denser reprojection, and the filtered reprojection.

    ``nv_dense`` defaults to twice the number of few-view angles.
    """
    n = fewview.n_det if n is None else n
    nv_dense = 2 * fewview.n_views if nv_dense is None else nv_dense
    img, dense, filt = prepare_arrays(fewview.data[None], fewview.angles, n, nv_dense)
    angles = equispaced_angles(nv_dense)
    return PipelineProducts(Image(img[0]), Sinogram(angles, dense[0], fewview.det_spacing),
                            Sinogram(angles, filt[0], fewview.det_spacing))
