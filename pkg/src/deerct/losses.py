"""Generator and critic objectives."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as T


@dataclass(frozen=True)
class LossWeights:
    lambda_al: float = 0.0025
    lambda_sl: float = 0.8
    lambda_gp: float = 10.0  # kept for completeness; no gradient penalty is computed
    clip_c: float = 0.01

    def __post_init__(self):
        for name in ("lambda_al", "lambda_sl", "lambda_gp", "clip_c"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class SsimParams:
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0
    window: int = 11
    weighting: str = "uniform"  # or "gaussian" (sigma 1.5)

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2


@lru_cache(maxsize=8)
def _window(size: int, weighting: str, dtype_name: str) -> np.ndarray:
    if weighting == "uniform":
        w = np.ones((size, size))
    elif weighting == "gaussian":
        ax = np.arange(size) - (size - 1) / 2
        g = np.exp(-ax ** 2 / (2 * 1.5 ** 2))
        w = np.outer(g, g)
    else:
        raise ValueError(f"unknown SSIM weighting {weighting!r}")
    w = w / w.sum()
    return w.reshape(1, 1, size, size).astype(dtype_name)


def _as_batch(x: T.Tensor) -> T.Tensor:
    if x.ndim == 2:
        return T.reshape(x, (1, 1) + x.shape)
    if x.ndim == 3:
        return T.reshape(x, (x.shape[0], 1) + x.shape[1:])
    raise ValueError(f"expected an image or a batch of images, got shape {x.shape}")


def ssim(x, y, p: SsimParams = SsimParams()) -> T.Tensor:
    """Mean structural similarity over all valid sliding windows (and the batch)."""
    x, y = T.as_tensor(x), T.as_tensor(y)
    if x.shape != y.shape:
        raise ValueError(f"ssim: shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape[-2:]) < p.window:
        raise ValueError(f"ssim: images {x.shape[-2:]} smaller than the {p.window}x{p.window} window")
    xb, yb = _as_batch(x), _as_batch(y)
    w = T.Tensor(_window(p.window, p.weighting, x.dtype.name))

    def blur(a):
        return T.conv2d(a, w)

    mu_x, mu_y = blur(xb), blur(yb)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    var_x = blur(xb * xb) - mu_xx
    var_y = blur(yb * yb) - mu_yy
    cov = blur(xb * yb) - mu_xy
    num = (2.0 * mu_xy + p.c1) * (2.0 * cov + p.c2)
    den = (mu_xx + mu_yy + p.c1) * (var_x + var_y + p.c2)
    return T.mean(num / den)


def _check_pair(name, x, y):
    if x.shape != y.shape:
        raise ValueError(f"{name}: shape mismatch {x.shape} vs {y.shape}")
    if x.size == 0:
        raise ValueError(f"{name}: empty batch")


def loss_mae(x, y) -> T.Tensor:
    x, y = T.as_tensor(x), T.as_tensor(y)
    _check_pair("loss_mae", x, y)
    return T.mean(T.abs(y - x))


def loss_mae_bp(x_bp, y) -> T.Tensor:
    """Same formula as :func:`loss_mae`, applied to the back-projection output."""
    return loss_mae(x_bp, y)


def loss_structural(x, y, p: SsimParams = SsimParams()) -> T.Tensor:
    return 1.0 - ssim(x, y, p)


def loss_adversarial(d, x_fake: T.Tensor) -> T.Tensor:
    return -T.mean(d(x_fake))


def loss_discriminator(d, x_fake: T.Tensor, y_real: T.Tensor) -> T.Tensor:
    """Wasserstein critic loss; call :meth:`Discriminator.clip` after each step."""
    return T.mean(d(x_fake)) - T.mean(d(y_real))


def loss_generator_total(l_al, l_sl, l1, l1_bp, weights: LossWeights) -> T.Tensor:
    """``lambda_al * L_al + lambda_sl * L_sl + L1 + L1_bp``; absent terms are skipped."""
    terms = []
    if l_al is not None and weights.lambda_al > 0:
        terms.append(weights.lambda_al * T.as_tensor(l_al))
    if l_sl is not None and weights.lambda_sl > 0:
        terms.append(weights.lambda_sl * T.as_tensor(l_sl))
    terms += [T.as_tensor(t) for t in (l1, l1_bp) if t is not None]
    if not terms:
        return T.Tensor(np.zeros((), dtype=np.float32))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total
