"""Finite-difference certification of the autodiff operators."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .analytic import backproject, make_filter


@dataclass
class OpSpec:
    """A differentiable function of ``len(shapes)`` inputs.

    ``kinks`` maps the sampled inputs to the values whose sign decides a
    non-smooth branch (ReLU/abs arguments); trials sampled too close to a
    kink are redrawn.
    """
    name: str
    fn: Callable[..., T.Tensor]
    shapes: Sequence[tuple[int, ...]]
    kinks: Callable[..., np.ndarray] | None = None
    low: float = -1.0
    high: float = 1.0
    extra: dict = field(default_factory=dict)


def _fd_gradient(f: Callable[[list[np.ndarray]], float], xs: list[np.ndarray], step: float) -> list[np.ndarray]:
    grads = []
    for x in xs:
        g = np.zeros_like(x)
        flat = x.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f(xs)
            flat[i] = orig - step
            fm = f(xs)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * step)
        grads.append(g)
    return grads


def grad_check(spec: OpSpec, trials: int = 20, step: float = 1e-5, seed: int = 0,
               dtype=np.float64, kink_margin: float | None = None, eps: float = 1e-12) -> float:
    """Max over trials of ``|g_autodiff - g_fd| / max(|g_fd|, eps)``.

    The scalar being differentiated is ``sum(op(inputs) * r)`` for a random
    fixed projection ``r`` so every output entry contributes.  Samples and
    ``r`` are rounded to dyadic grids (2**-20 and 2**-10), which makes central
    differences of linear maps exact when ``step`` is a power of two.
    """
    rng = np.random.default_rng(seed)
    margin = 10 * step if kink_margin is None else kink_margin
    worst = 0.0
    for _ in range(trials):
        for _attempt in range(1000):
            xs = [(np.round(rng.uniform(spec.low, spec.high, size=s) * 2.0 ** 20) / 2.0 ** 20).astype(dtype)
                  for s in spec.shapes]
            if spec.kinks is None or np.min(np.abs(spec.kinks(*xs))) > margin:
                break
        else:
            raise RuntimeError(f"{spec.name}: could not sample away from kinks")
        with T.no_grad():
            out_shape = spec.fn(*[T.Tensor(x) for x in xs]).shape
        r = (np.round(rng.normal(size=out_shape) * 2.0 ** 10) / 2.0 ** 10).astype(dtype)

        def scalar(arrs):
            with T.no_grad():
                return float(np.sum(spec.fn(*[T.Tensor(a) for a in arrs]).data * r))

        ts = [T.Tensor(x.copy(), requires_grad=True) for x in xs]
        loss = T.sum(spec.fn(*ts) * T.Tensor(r))
        loss.backward()
        g_ad = np.concatenate([(t.grad if t.grad is not None else np.zeros_like(t.data)).ravel() for t in ts])
        g_fd = np.concatenate([g.ravel() for g in _fd_gradient(scalar, [x.copy() for x in xs], step)])
        err = np.linalg.norm(g_ad - g_fd) / max(np.linalg.norm(g_fd), eps)
        worst = max(worst, float(err))
    return worst


def _relu_kink(x):
    return x


def operator_suite() -> list[OpSpec]:
    """One spec per operator the reconstruction network uses."""
    angles8 = np.pi * np.arange(4) / 4
    sl = make_filter("shepp-logan", 8).response
    return [
        OpSpec("identity", lambda x: x * 1.0, [(5,)]),
        OpSpec("conv2d", lambda x, w: T.conv2d(x, w), [(1, 1, 8, 8), (2, 1, 5, 5)]),
        OpSpec("conv2d_bias_stride2_pad1", lambda x, w, b: T.conv2d(x, w, b, stride=2, padding=1),
               [(2, 2, 7, 7), (3, 2, 3, 3), (3,)]),
        OpSpec("conv_transpose2d", lambda x, w, b: T.conv_transpose2d(x, w, b, padding=2),
               [(1, 2, 6, 6), (2, 3, 5, 5), (3,)]),
        OpSpec("conv_transpose2d_valid", lambda x, w: T.conv_transpose2d(x, w), [(1, 2, 4, 4), (2, 1, 5, 5)]),
        OpSpec("pointwise_linear", lambda q, w: T.pointwise_linear(q, w), [(2, 3, 4), (3, 4, 5)]),
        OpSpec("pointwise_linear_shared", lambda q, w: T.pointwise_linear(q, w), [(2, 3, 4), (5,)]),
        OpSpec("matmul", lambda a, b: a @ b, [(3, 4), (4, 2)]),
        OpSpec("relu", T.relu, [(4, 5)], kinks=_relu_kink),
        OpSpec("leaky_relu", lambda x: T.leaky_relu(x, 0.2), [(4, 5)], kinks=_relu_kink),
        OpSpec("concat", lambda a, b: T.concat([a, b], axis=1), [(2, 1, 3, 3), (2, 2, 3, 3)]),
        OpSpec("sum", lambda x: T.sum(x, axis=1), [(3, 4)]),
        OpSpec("mean", lambda x: T.mean(x), [(3, 4)]),
        OpSpec("abs", T.abs, [(4, 5)], kinks=_relu_kink),
        OpSpec("add_broadcast", lambda a, b: a + b, [(2, 3, 4), (3, 1)]),
        OpSpec("multiply", lambda a, b: a * b, [(3, 4), (3, 4)]),
        OpSpec("divide", lambda a, b: a / b, [(3, 4), (3, 4)], low=0.5, high=2.0),
        OpSpec("crop_pad", lambda x: T.pad2d(T.crop2d(x, 1), 2), [(1, 2, 6, 6)]),
        OpSpec("bilinear_rotate_30deg", lambda x: T.rotate(x, np.deg2rad(30.0)), [(8, 8)]),
        OpSpec("fourier_filter", lambda x: T.fourier_filter(x, sl), [(3, 8)]),
        OpSpec("learned_backprojection", lambda q, w: backproject(q, w, angles8, 8), [(1, 4, 8), (4, 8, 8)]),
    ]


def run_suite(trials: int = 20, step: float = 1e-5) -> dict[str, float]:
    return {spec.name: grad_check(spec, trials=trials, step=step) for spec in operator_suite()}
