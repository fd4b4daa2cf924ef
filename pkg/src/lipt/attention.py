"""Window self-attention and non-volatile sparse masking self-attention."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .masks import Mask, WindowGrid, beta, selection_indices
from .tensor import ConvWeights, conv2d

__all__ = [
    "default_heads",
    "WindowMSAWeights",
    "NVSMWeights",
    "softmax",
    "window_self_attention",
    "nvsm_sa",
]


def default_heads(width: int) -> int:
    return 2 if width >= 32 else 1


@dataclass
class WindowMSAWeights:
    q: ConvWeights
    k: ConvWeights
    v: ConvWeights
    heads: int = 1

    def __post_init__(self):
        c = self.q.c_out
        for name in ("q", "k", "v"):
            cw = getattr(self, name)
            if cw.kernel.shape != (c, c, 1, 1):
                raise ShapeError(f"{name} projection must be ({c}, {c}, 1, 1), got {cw.kernel.shape}")
        if self.heads < 1 or c % self.heads:
            raise ConfigError(f"{c} channels not divisible by {self.heads} heads")

    @property
    def channels(self) -> int:
        return self.q.c_out


@dataclass
class NVSMWeights:
    """Sparse (slwa) and dense (dlwa) attention paths plus the shared 1x1 output.

    Either path may be ``None`` (ablation); the remaining path then owns all
    channels.
    """

    slwa: WindowMSAWeights | None
    dlwa: WindowMSAWeights | None
    proj: ConvWeights
    m_sl: Mask
    m_dl: Mask

    def __post_init__(self):
        if self.slwa is None and self.dlwa is None:
            raise ConfigError("at least one of the sparse/dense attention paths is required")
        for m in (self.m_sl, self.m_dl):
            if beta(m) != 0.0:
                raise ConfigError(f"attention masks must be non-volatile, got beta={beta(m):.4f}")
        if (self.m_sl.p, self.m_sl.s) != (self.m_dl.p, self.m_dl.s):
            raise ConfigError("sparse and dense masks must share p and s")
        width = sum(w.channels for w in self.paths())
        if self.proj.kernel.shape != (width, width, 1, 1):
            raise ShapeError(f"output projection {self.proj.kernel.shape} does not match {width} channels")

    @property
    def p(self) -> int:
        return self.m_sl.p

    @property
    def s(self) -> int:
        return self.m_sl.s

    @property
    def channels(self) -> int:
        return self.proj.c_out

    def paths(self):
        return [w for w in (self.slwa, self.dlwa) if w is not None]


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def window_self_attention(tokens: np.ndarray, w: WindowMSAWeights) -> np.ndarray:
    """Per-window multi-head softmax attention over tokens shaped (windows, c, t)."""
    b, c, t = tokens.shape
    if c != w.channels:
        raise ShapeError(f"tokens {tokens.shape} do not match attention width {w.channels}")
    h = w.heads
    d = c // h

    def project(cw):
        y = np.matmul(cw.kernel[:, :, 0, 0].astype(tokens.dtype), tokens)
        return (y + cw.bias.astype(tokens.dtype)[:, None]).reshape(b, h, d, t)

    q, k, v = project(w.q), project(w.k), project(w.v)
    scores = np.matmul(q.transpose(0, 1, 3, 2), k) * tokens.dtype.type(d ** -0.5)
    attn = softmax(scores, axis=-1)  # (b, h, query, key)
    out = np.matmul(v, attn.transpose(0, 1, 3, 2))
    return out.reshape(b, c, t).astype(tokens.dtype, copy=False)


def _masked_path(x, w, mask, grid):
    plan = selection_indices(mask, grid)
    tokens = plan.gather_tokens(x)
    return plan.scatter_tokens(window_self_attention(tokens, w), x.shape[0])


def nvsm_sa(x: np.ndarray, w: NVSMWeights, grid: WindowGrid | None = None) -> np.ndarray:
    """x + proj(merge(concat(SLWA(first half), DLWA(second half)))).

    Window partition, expansion and masking are folded into one gather whose
    index plan is a certified pixel permutation; the matching scatter performs
    the window merge.
    """
    if x.shape[1] != w.channels:
        raise ShapeError(f"input {x.shape} does not match attention width {w.channels}")
    if grid is None:
        grid = WindowGrid.for_tensor(x, w.p, w.s)
    outs, start = [], 0
    for path, mask in ((w.slwa, w.m_sl), (w.dlwa, w.m_dl)):
        if path is None:
            continue
        part = x[:, start:start + path.channels]
        outs.append(_masked_path(part, path, mask, grid))
        start += path.channels
    y = np.concatenate(outs, axis=1) if len(outs) > 1 else outs[0]
    return x + conv2d(y, w.proj)
