"""Raw convolution kernels.

Thin numpy <-> torch bridge for the dense conv arithmetic only.  No torch
autograd is involved: every adjoint used by the tape is spelled out here and
certified against finite differences in the test-suite.
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch.nn import grad as tgrad


def _t(a: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(a))


def conv2d(x, w, b, stride, padding):
    out = F.conv2d(_t(x), _t(w), None if b is None else _t(b), stride=stride, padding=padding)
    return out.numpy()


def conv2d_grad_input(x_shape, w, g, stride, padding):
    return tgrad.conv2d_input(tuple(x_shape), _t(w), _t(g), stride=stride, padding=padding).numpy()


def conv2d_grad_weight(x, w_shape, g, stride, padding):
    return tgrad.conv2d_weight(_t(x), tuple(w_shape), _t(g), stride=stride, padding=padding).numpy()


def conv_transpose2d(x, w, b, stride, padding):
    out = F.conv_transpose2d(_t(x), _t(w), None if b is None else _t(b), stride=stride, padding=padding)
    return out.numpy()


def conv_transpose2d_grad_input(w, g, stride, padding):
    # adjoint of a transposed convolution is the forward convolution
    return F.conv2d(_t(g), _t(w), stride=stride, padding=padding).numpy()


def conv_transpose2d_grad_weight(x, w_shape, g, stride, padding):
    # y = C_w^T x  =>  dL/dw = conv2d_weight(input=g, grad_output=x)
    return tgrad.conv2d_weight(_t(g), tuple(w_shape), _t(x), stride=stride, padding=padding).numpy()
