"""Dense NCHW kernels used by every other module.

Tensors are plain ``numpy.ndarray`` objects of shape (n, c, h, w). Float32 is
the working precision; every kernel preserves the dtype of its input so the
same code runs in float64 for verification.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

__all__ = [
    "ConvWeights",
    "as_tensor",
    "conv2d",
    "relu",
    "avg_pool3x3_same",
    "pad_const",
    "pad_reflect",
    "crop",
    "pixel_shuffle",
    "SplitMix64",
    "rng_normal",
    "rng_uniform",
]


def as_tensor(x, dtype=np.float32) -> np.ndarray:
    x = np.asarray(x, dtype=dtype)
    if x.ndim != 4:
        raise ShapeError(f"expected a 4-D (n, c, h, w) tensor, got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"all tensor dimensions must be >= 1, got {x.shape}")
    return x


@dataclass
class ConvWeights:
    """Kernel (c_out, c_in // groups, k, k) plus a bias of length c_out."""

    kernel: np.ndarray
    bias: np.ndarray
    groups: int = 1

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel)
        self.bias = np.asarray(self.bias)
        if self.kernel.ndim != 4 or self.kernel.shape[2] != self.kernel.shape[3]:
            raise ShapeError(f"conv kernel must be (c_out, c_in, k, k), got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match kernel shape {self.kernel.shape}"
            )
        if self.kernel.shape[0] % self.groups:
            raise ShapeError(f"c_out={self.kernel.shape[0]} not divisible by groups={self.groups}")

    @property
    def c_out(self) -> int:
        return self.kernel.shape[0]

    @property
    def c_in(self) -> int:
        return self.kernel.shape[1] * self.groups

    @property
    def k(self) -> int:
        return self.kernel.shape[2]

    @classmethod
    def zeros(cls, c_out, c_in, k, groups=1, dtype=np.float32):
        return cls(np.zeros((c_out, c_in // groups, k, k), dtype), np.zeros(c_out, dtype), groups)

    def astype(self, dtype) -> "ConvWeights":
        return ConvWeights(self.kernel.astype(dtype), self.bias.astype(dtype), self.groups)


def conv2d(x: np.ndarray, w: ConvWeights, padding: int | None = None) -> np.ndarray:
    """Stride-1 cross-correlation with zero padding (default: same-size).

    The reduction runs over im2col columns ordered (input channel, kernel row,
    kernel column) in a single GEMM, so results do not depend on how many
    threads evaluate independent output pixels.
    """
    k = w.k
    if padding is None:
        padding = (k - 1) // 2
    n, c, h, wd = x.shape
    if c != w.c_in:
        raise ShapeError(
            f"conv2d: input shape {x.shape} incompatible with kernel shape "
            f"{w.kernel.shape} (groups={w.groups})"
        )
    kernel = w.kernel.astype(x.dtype, copy=False)
    bias = w.bias.astype(x.dtype, copy=False)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho, wo = x.shape[2] - k + 1, x.shape[3] - k + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input shape {x.shape} too small for kernel {kernel.shape}")

    if w.groups == 1:
        if k == 1:
            out = np.matmul(kernel[:, :, 0, 0], x.reshape(n, c, ho * wo))
        else:
            cols = sliding_window_view(x, (k, k), axis=(2, 3))  # n, c, ho, wo, k, k
            cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * k * k)
            out = np.matmul(cols, kernel.reshape(w.c_out, -1).T).transpose(0, 2, 1)
        out = out.reshape(n, w.c_out, ho, wo)
    elif w.groups == c and kernel.shape[1] == 1 and w.c_out == c:
        # depthwise: fixed tap order, kernel row-major
        out = np.zeros((n, c, ho, wo), dtype=x.dtype)
        for u in range(k):
            for v in range(k):
                out += kernel[None, :, 0, u, v, None, None] * x[:, :, u:u + ho, v:v + wo]
    else:
        cg = c // w.groups
        og = w.c_out // w.groups
        parts = []
        for g in range(w.groups):
            sub = ConvWeights(kernel[g * og:(g + 1) * og], np.zeros(og, x.dtype))
            parts.append(conv2d(x[:, g * cg:(g + 1) * cg], sub, padding=0))
        out = np.concatenate(parts, axis=1)
    out = out + bias[None, :, None, None]
    return np.ascontiguousarray(out, dtype=x.dtype)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def avg_pool3x3_same(x: np.ndarray) -> np.ndarray:
    """3x3 mean filter, zero padding 1, stride 1 (border taps count as zeros)."""
    c = x.shape[1]
    kernel = np.full((c, 1, 3, 3), 1.0 / 9.0, dtype=x.dtype)
    return conv2d(x, ConvWeights(kernel, np.zeros(c, x.dtype), groups=c))


def pad_const(x: np.ndarray, values: np.ndarray, width: int = 1) -> np.ndarray:
    """Pad all four sides by ``width`` with a per-channel constant."""
    n, c, h, w = x.shape
    values = np.asarray(values, dtype=x.dtype)
    out = np.empty((n, c, h + 2 * width, w + 2 * width), dtype=x.dtype)
    out[...] = values[None, :, None, None]
    out[:, :, width:width + h, width:width + w] = x
    return out


def pad_reflect(x: np.ndarray, right: int, bottom: int) -> np.ndarray:
    """Reflect-pad (edge pixel not repeated) on the right and bottom only."""
    h, w = x.shape[2:]
    if right < 0 or bottom < 0:
        raise ShapeError(f"pad amounts must be non-negative, got right={right} bottom={bottom}")
    if right >= w or bottom >= h:
        raise ShapeError(
            f"reflect pad (right={right}, bottom={bottom}) must be smaller than "
            f"the image size {h}x{w}"
        )
    if not right and not bottom:
        return x
    return np.pad(x, ((0, 0), (0, 0), (0, bottom), (0, right)), mode="reflect")


def crop(x: np.ndarray, height: int, width: int) -> np.ndarray:
    return np.ascontiguousarray(x[:, :, :height, :width])


def pixel_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Channel o*r^2 + a*r + b moves to output channel o, sub-pixel (a, b)."""
    n, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise ShapeError(f"pixel_shuffle: {c} channels not divisible by r^2={r * r}")
    if r == 1:
        return x
    o = c // (r * r)
    y = x.reshape(n, o, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(y.reshape(n, o, h * r, w * r))


_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 stream. Vectorized: output i is mix(seed + (i+1)*gamma)."""

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self, count: int) -> np.ndarray:
        steps = np.arange(1, count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * _GAMMA
            z = (z ^ (z >> np.uint64(30))) * _M1
            z = (z ^ (z >> np.uint64(27))) * _M2
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + count * int(_GAMMA)) & _MASK64
        return z

    def uniform(self, count: int) -> np.ndarray:
        """Float64 samples in [0, 1) with 53 random bits."""
        return (self.next_u64(count) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def normal(self, count: int) -> np.ndarray:
        pairs = (count + 1) // 2
        bits = self.next_u64(2 * pairs) >> np.uint64(11)
        u1 = (bits[0::2].astype(np.float64) + 1.0) * 2.0 ** -53  # (0, 1]
        u2 = bits[1::2].astype(np.float64) * 2.0 ** -53
        radius = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(2.0 * np.pi * u2)
        z[1::2] = radius * np.sin(2.0 * np.pi * u2)
        return z[:count]


def rng_normal(seed: int, shape) -> np.ndarray:
    shape = tuple(shape)
    return SplitMix64(seed).normal(int(np.prod(shape))).astype(np.float32).reshape(shape)


def rng_uniform(seed: int, shape, low=0.0, high=1.0) -> np.ndarray:
    shape = tuple(shape)
    u = SplitMix64(seed).uniform(int(np.prod(shape)))
    return (low + (high - low) * u).astype(np.float32).reshape(shape)
