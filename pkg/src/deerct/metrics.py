"""Image-quality metrics and multi-method evaluation tables."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import tensor as T
from .losses import SsimParams, ssim as _ssim

INF_SENTINEL = "+inf"


def psnr(x: np.ndarray, y: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` when the images are equal."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"psnr: shape mismatch {x.shape} vs {y.shape}")
    if peak <= 0:
        raise ValueError(f"psnr: peak must be positive, got {peak}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(x: np.ndarray, y: np.ndarray, params: SsimParams = SsimParams()) -> float:
    with T.no_grad():
        return float(_ssim(T.Tensor(np.asarray(x, dtype=np.float64)),
                           T.Tensor(np.asarray(y, dtype=np.float64)), params).data)


def mae(x: np.ndarray, y: np.ndarray) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"mae: shape mismatch {x.shape} vs {y.shape}")
    return float(np.mean(np.abs(x - y)))


METRICS = {"psnr": psnr, "ssim": ssim, "mae": mae}


def format_value(v: float, digits: int = 4) -> str:
    if math.isinf(v):
        return INF_SENTINEL if v > 0 else "-inf"
    return f"{v:.{digits}f}"


@dataclass
class MetricReport:
    methods: list[str]
    per_image: dict[str, dict[str, list[float]]] = field(default_factory=dict)

    def aggregate(self, method: str, metric: str) -> tuple[float, float]:
        vals = np.asarray(self.per_image[method][metric], dtype=np.float64)
        exact = np.isinf(vals) & (vals > 0)
        if exact.all():
            return math.inf, 0.0
        if exact.any():
            # a mix of exact and inexact reconstructions has no finite spread
            return math.inf, math.inf
        return float(vals.mean()), float(vals.std())

    def count(self, method: str) -> int:
        return len(self.per_image[method]["mae"])

    def to_records(self) -> list[dict]:
        rows = []
        for m in self.methods:
            row = {"method": m, "count": self.count(m)}
            for k in METRICS:
                mu, sd = self.aggregate(m, k)
                row[f"{k}_mean"] = INF_SENTINEL if math.isinf(mu) else mu
                row[f"{k}_std"] = INF_SENTINEL if math.isinf(sd) else sd
            rows.append(row)
        return rows

    def to_table(self) -> str:
        head = f"{'method':<14}" + "".join(f"{k.upper():>22}" for k in METRICS)
        lines = [head, "-" * len(head)]
        for m in self.methods:
            cells = []
            for k in METRICS:
                mu, sd = self.aggregate(m, k)
                digits = 2 if k == "psnr" else 4
                cells.append(f"{format_value(mu, digits)} ± {format_value(sd, digits)}".rjust(22))
            lines.append(f"{m:<14}" + "".join(cells))
        return "\n".join(lines)


Method = Callable[[Mapping[str, np.ndarray]], np.ndarray]


def evaluate(methods: Sequence[tuple[str, Method]], test_set: Mapping[str, np.ndarray],
             batch_size: int = 16) -> MetricReport:
    """Run every method on the shared test inputs and score against ``test_set['gt']``.

    A method receives a dict of batched arrays (the same keys as ``test_set``)
    and returns a ``(B, n, n)`` batch of reconstructions.
    """
    if not methods:
        raise ValueError("evaluate needs at least one method")
    gt = np.asarray(test_set["gt"])
    report = MetricReport([name for name, _ in methods])
    for name, fn in methods:
        scores = {k: [] for k in METRICS}
        for lo in range(0, len(gt), batch_size):
            batch = {k: v[lo:lo + batch_size] for k, v in test_set.items()
                     if isinstance(v, np.ndarray) and v.shape[:1] == gt.shape[:1]}
            out = np.asarray(fn(batch))
            if out.shape != batch["gt"].shape:
                raise ValueError(f"method {name!r} produced {out.shape}, expected {batch['gt'].shape}")
            for rec, ref in zip(out, batch["gt"]):
                for k, f in METRICS.items():
                    scores[k].append(f(rec, ref))
        report.per_image[name] = scores
    return report
