"""Generator (learned back-projection + U-net refinement) and discriminator."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .analytic import backproject
from .geometry import Image, Sinogram

VARIANTS = ("deer", "deer-nowgan", "deer-lite", "deer-sino", "deer-fbp")


def _he(rng: np.random.Generator, shape, fan_in: int, dtype) -> T.Tensor:
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)
    return T.Tensor(w, requires_grad=True)


def _zeros(n: int, dtype) -> T.Tensor:
    return T.Tensor(np.zeros(n, dtype=dtype), requires_grad=True)


class BpLayer:
    """Point-wise fully-connected back-projection without bias.

    ``view-dependent`` keeps one length-``n`` line vector per sinogram sample,
    ``lite`` shares a single vector across every view and detector.
    """

    def __init__(self, variant: str, n: int, n_det: int | None = None, n_views: int | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float32, noise: float = 0.01):
        if variant not in ("view-dependent", "lite"):
            raise ValueError(f"unknown back-projection variant {variant!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.variant = variant
        self.n = n
        self.n_det = n if n_det is None else n_det
        self.n_views = n_views
        shape = (n,) if variant == "lite" else (n_views, self.n_det, n)
        if variant == "view-dependent" and n_views is None:
            raise ValueError("view-dependent back-projection needs n_views")
        w = 1.0 + rng.uniform(-noise, noise, size=shape)
        self.weight = T.Tensor(w.astype(dtype), requires_grad=True)

    def parameters(self) -> dict[str, T.Tensor]:
        return {"bp.weight": self.weight}

    @property
    def n_params(self) -> int:
        return self.weight.size

    def __call__(self, q: T.Tensor, angles) -> T.Tensor:
        views = q.shape[1]
        if self.variant == "view-dependent" and views != self.n_views:
            raise ValueError(f"view-dependent layer trained for {self.n_views} views got {views}")
        if q.shape[2] != self.n_det:
            raise ValueError(f"layer expects {self.n_det} detectors, sinogram has {q.shape[2]}")
        return backproject(q, self.weight, angles, self.n)


def bp_forward(layer: BpLayer, filtered_sino: Sinogram) -> Image:
    q = T.Tensor(filtered_sino.data[None].astype(layer.weight.dtype))
    return Image(layer(q, filtered_sino.angles).data[0])


def lite_rescale(bp_image, nv_train: int, nv_test: int, internal_scaling: bool = True):
    """Magnitude correction when a lite layer runs at a different view count.

    The layer already divides its view sum by the view count, so the factor
    is 1; ``internal_scaling=False`` gives the raw-sum factor
    ``nv_train / nv_test``.
    """
    if nv_train < 1 or nv_test < 1:
        raise ValueError(f"view counts must be >= 1, got {nv_train} and {nv_test}")
    factor = 1.0 if internal_scaling else nv_train / nv_test
    if isinstance(bp_image, Image):
        return Image(bp_image.data * factor, bp_image.pixel_size)
    return bp_image * factor


class UNet:
    """Nine-layer encoder/decoder: four convolutions, a bottleneck convolution
    and four transposed convolutions, each 32 kernels of 5x5 at stride 1.
    Encoder outputs 1-4 are concatenated into the mirrored decoder inputs.

    ``padding='valid'`` uses no zero padding: encoder features are centre
    cropped to match, and the (n-4)-sized output is zero-padded back to n.

    Without biases (the default) every layer is positively homogeneous, so a
    zero input maps to an exactly zero output.
    """

    def __init__(self, in_channels: int = 2, filters: int = 32, kernel: int = 5, padding: str = "same",
                 final_activation: str = "linear", rng: np.random.Generator | None = None, dtype=np.float32,
                 bias: bool = False):
        if padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
        if final_activation not in ("linear", "relu"):
            raise ValueError(f"final_activation must be 'linear' or 'relu', got {final_activation!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_channels = in_channels
        self.kernel = kernel
        self.padding = padding
        self.final_activation = final_activation
        self.bias = bias
        k2 = kernel * kernel
        f = filters
        self.params: dict[str, T.Tensor] = {}
        chans = [in_channels, f, f, f, f]
        for i in range(5):
            self.params[f"unet.conv{i + 1}.w"] = _he(rng, (f, chans[i], kernel, kernel), chans[i] * k2, dtype)
            if bias:
                self.params[f"unet.conv{i + 1}.b"] = _zeros(f, dtype)
        for i in range(4):
            cout = 1 if i == 3 else f
            self.params[f"unet.deconv{i + 6}.w"] = _he(rng, (2 * f, cout, kernel, kernel), 2 * f * k2, dtype)
            if bias:
                self.params[f"unet.deconv{i + 6}.b"] = _zeros(cout, dtype)

    def parameters(self) -> dict[str, T.Tensor]:
        return self.params

    @property
    def _pad(self) -> int:
        return self.kernel // 2 if self.padding == "same" else 0

    def __call__(self, x: T.Tensor) -> T.Tensor:
        """``x`` is ``(B, C, n, n)``; returns ``(B, n, n)``."""
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"U-net expects (B, {self.in_channels}, n, n), got {x.shape}")
        p = self.params
        pad = self._pad
        shrink = self.kernel - 1 - 2 * pad
        skips = []
        h = x
        for i in range(1, 5):
            h = T.relu(T.conv2d(h, p[f"unet.conv{i}.w"], p.get(f"unet.conv{i}.b"), padding=pad))
            skips.append(h)
        h = T.relu(T.conv2d(h, p["unet.conv5.w"], p.get("unet.conv5.b"), padding=pad))
        for i in range(4):
            skip = skips[3 - i]
            skip = T.crop2d(skip, (skip.shape[-1] - h.shape[-1]) // 2)
            h = T.conv_transpose2d(T.concat([h, skip], axis=1), p[f"unet.deconv{i + 6}.w"],
                                   p.get(f"unet.deconv{i + 6}.b"), padding=pad)
            if i < 3 or self.final_activation == "relu":
                h = T.relu(h)
        if shrink:
            h = T.pad2d(h, (x.shape[-1] - h.shape[-1]) // 2)
        return T.reshape(h, (h.shape[0],) + h.shape[2:])


def refine(unet: UNet, bp_image, fbp_image):
    """Concatenate the two images on the channel axis and run the U-net.

    Accepts :class:`Image` pairs or batched tensors ``(B, n, n)``.
    """
    if isinstance(bp_image, Image):
        a = T.Tensor(bp_image.data[None].astype(np.float32))
        b = T.Tensor(fbp_image.data[None].astype(np.float32))
        return Image(refine(unet, a, b).data[0])
    if bp_image.shape != fbp_image.shape:
        raise ValueError(f"refine: input shapes differ, {bp_image.shape} vs {fbp_image.shape}")
    b, n, _ = bp_image.shape
    x = T.concat([T.reshape(bp_image, (b, 1, n, n)), T.reshape(fbp_image, (b, 1, n, n))], axis=1)
    return unet(x)


class Discriminator:
    """Six 3x3 convolutions (64, 64, 128, 128, 256, 256 filters, zero padding,
    stride 1 on odd layers and 2 on even layers), then dense layers of 1024 and
    1 units.  Leaky ReLU (slope 0.2) follows every layer except the scalar
    critic output."""

    FILTERS = (64, 64, 128, 128, 256, 256)

    def __init__(self, n: int, rng: np.random.Generator | None = None, dtype=np.float32,
                 filters: tuple[int, ...] = FILTERS, hidden: int = 1024, slope: float = 0.2):
        rng = np.random.default_rng(0) if rng is None else rng
        self.n = n
        self.slope = slope
        self.params: dict[str, T.Tensor] = {}
        cin = 1
        side = n
        for i, f in enumerate(filters):
            self.params[f"disc.conv{i + 1}.w"] = _he(rng, (f, cin, 3, 3), cin * 9, dtype)
            self.params[f"disc.conv{i + 1}.b"] = _zeros(f, dtype)
            cin = f
            if i % 2 == 1:
                side = (side - 1) // 2 + 1
        self.strides = tuple(1 if i % 2 == 0 else 2 for i in range(len(filters)))
        flat = cin * side * side
        self.params["disc.fc1.w"] = _he(rng, (flat, hidden), flat, dtype)
        self.params["disc.fc1.b"] = _zeros(hidden, dtype)
        self.params["disc.fc2.w"] = _he(rng, (hidden, 1), hidden, dtype)
        self.params["disc.fc2.b"] = _zeros(1, dtype)

    def parameters(self) -> dict[str, T.Tensor]:
        return self.params

    def features(self, img: T.Tensor) -> list[T.Tensor]:
        b = img.shape[0]
        h = T.reshape(img, (b, 1) + img.shape[1:])
        out = []
        for i, stride in enumerate(self.strides):
            p = self.params
            h = T.leaky_relu(T.conv2d(h, p[f"disc.conv{i + 1}.w"], p[f"disc.conv{i + 1}.b"],
                                      stride=stride, padding=1), self.slope)
            out.append(h)
        return out

    def __call__(self, img: T.Tensor) -> T.Tensor:
        """``img`` is ``(B, n, n)``; returns ``(B,)`` critic scores."""
        if img.ndim != 3 or img.shape[1:] != (self.n, self.n):
            raise ValueError(f"discriminator expects (B, {self.n}, {self.n}), got {img.shape}")
        h = self.features(img)[-1]
        p = self.params
        h = T.reshape(h, (h.shape[0], -1))
        h = T.leaky_relu(h @ p["disc.fc1.w"] + p["disc.fc1.b"], self.slope)
        h = h @ p["disc.fc2.w"] + p["disc.fc2.b"]
        return T.reshape(h, (h.shape[0],))

    def clip(self, c: float) -> None:
        for t in self.params.values():
            np.clip(t.data, -c, c, out=t.data)


def discriminate(d: Discriminator, img) -> float:
    if isinstance(img, Image):
        return float(d(T.Tensor(img.data[None].astype(np.float32))).data[0])
    return d(img)


class Generator:
    """Back-projection stage followed by refinement, wired per variant.

    ======== ============== ====================
    variant  bp layer       refinement input
    ======== ============== ====================
    deer     view-dependent (bp, fbp)
    nowgan   view-dependent (bp, fbp)
    lite     lite           (bp, fbp)
    sino     view-dependent (bp, bp)
    fbp      none           (fbp, fbp)
    ======== ============== ====================
    """

    def __init__(self, variant: str, n: int, n_views: int, n_det: int | None = None,
                 padding: str = "same", final_activation: str = "linear", seed: int = 0, dtype=np.float32,
                 unet_bias: bool = False):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        rng = np.random.default_rng([seed, 1])
        self.variant = variant
        self.n = n
        self.bp: BpLayer | None = None
        if variant != "deer-fbp":
            kind = "lite" if variant == "deer-lite" else "view-dependent"
            self.bp = BpLayer(kind, n, n_det, n_views, rng=rng, dtype=dtype)
        self.unet = UNet(padding=padding, final_activation=final_activation,
                         rng=np.random.default_rng([seed, 2]), dtype=dtype, bias=unet_bias)

    def bp_parameters(self) -> dict[str, T.Tensor]:
        return {} if self.bp is None else self.bp.parameters()

    def refine_parameters(self) -> dict[str, T.Tensor]:
        return self.unet.parameters()

    def parameters(self) -> dict[str, T.Tensor]:
        return {**self.bp_parameters(), **self.refine_parameters()}

    def back_project(self, filtered: T.Tensor, angles) -> T.Tensor | None:
        return None if self.bp is None else self.bp(filtered, angles)

    def __call__(self, filtered: T.Tensor, fbp_img: T.Tensor, angles, x_bp: T.Tensor | None = None):
        """Return ``(X, X_bp)``; ``X_bp`` is None for the image-only variant."""
        if x_bp is None:
            x_bp = self.back_project(filtered, angles)
        if self.variant == "deer-fbp":
            return refine(self.unet, fbp_img, fbp_img), None
        if self.variant == "deer-sino":
            return refine(self.unet, x_bp, x_bp), x_bp
        return refine(self.unet, x_bp, fbp_img), x_bp
