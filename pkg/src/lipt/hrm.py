"""High-frequency reparameterization module (HRM).

Training form of one rep-conv stage is the sum of five same-size branches::

    conv1(x) + conv3(conv1(x)) + sobel(conv1(x)) + avg3x3(conv1(x)) + conv3(x)

Every 1x1 that feeds a 3x3 stage is evaluated on the zero-padded input, so its
padded border carries the 1x1 bias rather than zero. This is what makes the
single-kernel fusion exact on border pixels as well as the interior.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import ConvWeights, conv2d, pad_const, relu

__all__ = [
    "SOBEL_X",
    "SOBEL_Y",
    "SobelBranch",
    "RepConvWeights",
    "HRMWeights",
    "isotropic_sobel",
    "repconv_forward",
    "fuse_repconv",
    "fuse_hrm",
    "hrm_forward",
    "repconv_macs",
]

_R2 = np.sqrt(2.0)
SOBEL_X = np.array([[1.0, 0.0, -1.0], [_R2, 0.0, -_R2], [1.0, 0.0, -1.0]])
SOBEL_Y = np.array([[-1.0, -_R2, -1.0], [0.0, 0.0, 0.0], [1.0, _R2, 1.0]])
AVG3 = np.full((3, 3), 1.0 / 9.0)


@dataclass
class SobelBranch:
    kx: ConvWeights
    ky: ConvWeights
    sx: np.ndarray
    sy: np.ndarray
    bdx: np.ndarray
    bdy: np.ndarray

    @property
    def channels(self) -> int:
        return self.kx.c_out

    def directions(self):
        yield self.kx, self.sx, self.bdx, SOBEL_X
        yield self.ky, self.sy, self.bdy, SOBEL_Y


@dataclass
class RepConvWeights:
    """Multi-branch training form. Absent branches are ``None``."""

    conv3: ConvWeights
    conv1: ConvWeights | None = None
    conv1_3: tuple[ConvWeights, ConvWeights] | None = None
    sobel: SobelBranch | None = None
    avg_pre: ConvWeights | None = None

    @property
    def channels(self) -> int:
        return self.conv3.c_out


@dataclass
class HRMWeights:
    """Two rep-conv stages; each is a :class:`RepConvWeights` or an already fused 3x3."""

    first: RepConvWeights | ConvWeights
    second: RepConvWeights | ConvWeights

    @property
    def fused(self) -> bool:
        return isinstance(self.first, ConvWeights) and isinstance(self.second, ConvWeights)


def _pre_padded(x, pre: ConvWeights):
    """1x1 conv evaluated on the zero-padded input (border = bias)."""
    return pad_const(conv2d(x, pre), pre.bias)


def _depthwise(kernel3: np.ndarray, scale: np.ndarray, bias: np.ndarray) -> ConvWeights:
    c = scale.shape[0]
    k = scale[:, None, None, None] * kernel3[None, None]
    return ConvWeights(k, np.asarray(bias), groups=c)


def isotropic_sobel(x: np.ndarray, w: SobelBranch) -> np.ndarray:
    """Both directions of: per-channel scale * fixed filter, applied depthwise
    to a bias-padded 1x1 projection, plus a per-channel bias."""
    if x.shape[1] != w.kx.c_in:
        raise ShapeError(f"sobel branch expects {w.kx.c_in} channels, input is {x.shape}")
    out = None
    for k, scale, bias, d in w.directions():
        dw = _depthwise(d, np.asarray(scale, np.float64), bias).astype(x.dtype)
        f = conv2d(_pre_padded(x, k), dw, padding=0)
        out = f if out is None else out + f
    return out


def repconv_forward(x: np.ndarray, w: RepConvWeights) -> np.ndarray:
    if x.shape[1] != w.conv3.c_in:
        raise ShapeError(f"rep-conv stage expects {w.conv3.c_in} channels, input is {x.shape}")
    out = conv2d(x, w.conv3)
    if w.conv1 is not None:
        out = out + conv2d(x, w.conv1)
    if w.conv1_3 is not None:
        pre, k3 = w.conv1_3
        out = out + conv2d(_pre_padded(x, pre), k3, padding=0)
    if w.sobel is not None:
        out = out + isotropic_sobel(x, w.sobel)
    if w.avg_pre is not None:
        c = w.avg_pre.c_out
        avg = _depthwise(AVG3, np.ones(c), np.zeros(c)).astype(x.dtype)
        out = out + conv2d(_pre_padded(x, w.avg_pre), avg, padding=0)
    return out


def _apply(x, g):
    return conv2d(x, g) if isinstance(g, ConvWeights) else repconv_forward(x, g)


def _compose(k1: ConvWeights, k3: np.ndarray, b3: np.ndarray):
    """Fold a 1x1 (k1) into a following dense 3x3 kernel k3 (c_out, m, 3, 3)."""
    kernel = np.einsum("omuv,mi->oiuv", k3, k1.kernel[:, :, 0, 0].astype(np.float64))
    bias = np.einsum("omuv,m->o", k3, k1.bias.astype(np.float64)) + b3
    return kernel, bias


def _diag(per_channel_kernel: np.ndarray) -> np.ndarray:
    """Depthwise (c, 3, 3) kernel -> dense (c, c, 3, 3) kernel."""
    c = per_channel_kernel.shape[0]
    dense = np.zeros((c, c, 3, 3))
    dense[np.arange(c), np.arange(c)] = per_channel_kernel
    return dense


def fuse_repconv(w: RepConvWeights) -> ConvWeights:
    """Collapse all branches into one 3x3 convolution (computed in float64)."""
    dtype = w.conv3.kernel.dtype
    kernel = w.conv3.kernel.astype(np.float64).copy()
    bias = w.conv3.bias.astype(np.float64).copy()
    if w.conv1 is not None:
        kernel[:, :, 1, 1] += w.conv1.kernel[:, :, 0, 0]
        bias += w.conv1.bias
    if w.conv1_3 is not None:
        pre, k3 = w.conv1_3
        k, b = _compose(pre, k3.kernel.astype(np.float64), k3.bias.astype(np.float64))
        kernel += k
        bias += b
    if w.sobel is not None:
        for k1, scale, bd, d in w.sobel.directions():
            per_channel = np.asarray(scale, np.float64)[:, None, None] * d[None]
            k, b = _compose(k1, _diag(per_channel), np.asarray(bd, np.float64))
            kernel += k
            bias += b
    if w.avg_pre is not None:
        c = w.avg_pre.c_out
        k, b = _compose(w.avg_pre, _diag(np.broadcast_to(AVG3, (c, 3, 3))), np.zeros(c))
        kernel += k
        bias += b
    return ConvWeights(kernel.astype(dtype), bias.astype(dtype))


def fuse_hrm(w: HRMWeights) -> HRMWeights:
    def one(g):
        return g if isinstance(g, ConvWeights) else fuse_repconv(g)

    return HRMWeights(one(w.first), one(w.second))


def hrm_forward(x: np.ndarray, w: HRMWeights, fused: bool = False) -> np.ndarray:
    """x + second(relu(first(x))); ``fused`` evaluates the single-kernel form."""
    if fused:
        w = fuse_hrm(w)
    return x + _apply(relu(_apply(x, w.first)), w.second)


def repconv_macs(channels: int, height: int, width: int, *, fused: bool = False,
            sobel: bool = True, branches: bool = True) -> int:
    """Multiply-accumulates of one rep-conv stage on an h x w map.

    ``branches=False`` is the plain single-3x3 block; ``fused`` the Rep-Conv.
    """
    c, hw = channels, height * width
    dense3, one, dw3 = 9 * c * c * hw, c * c * hw, 9 * c * hw
    if fused or not branches:
        return dense3
    macs = dense3 + one + (one + dense3) + (one + dw3)
    if sobel:
        macs += 2 * (one + dw3)
    return macs
