"""Window geometry and the non-volatile sampling-mask calculus.

A mask selects p*p of the sp*sp positions of an expanded window. Position
(a*p + x, b*p + y) of the expanded window for window (i, j) is pixel (x, y) of
original window (i + a, j + b), indices taken modulo the window grid (the
bottom/right windows wrap to the top/left ones).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import FormatError, MaskError, ShapeError

__all__ = [
    "WindowGrid",
    "Mask",
    "IndexPlan",
    "window_partition",
    "window_merge",
    "window_expand",
    "mask_from_assignment",
    "sparse_mask",
    "dense_mask",
    "global_stride_mask",
    "coverage_map",
    "beta",
    "is_non_volatile",
    "selection_indices",
    "format_mask",
    "parse_mask",
    "load_mask",
    "save_mask",
]


@dataclass(frozen=True)
class WindowGrid:
    p: int
    s: int
    height: int
    width: int

    def __post_init__(self):
        if self.p < 1 or self.s < 1:
            raise ShapeError(f"window size p={self.p} and expansion s={self.s} must be positive")
        if self.height % self.p or self.width % self.p:
            raise ShapeError(
                f"image {self.height}x{self.width} is not a multiple of window size {self.p}"
            )
        if self.s * self.p > min(self.height, self.width):
            raise ShapeError(
                f"expanded window {self.s * self.p} exceeds image {self.height}x{self.width}"
            )

    @classmethod
    def for_tensor(cls, x: np.ndarray, p: int, s: int) -> "WindowGrid":
        return cls(p, s, x.shape[2], x.shape[3])

    @property
    def nh(self) -> int:
        return self.height // self.p

    @property
    def nw(self) -> int:
        return self.width // self.p

    @property
    def count(self) -> int:
        return self.nh * self.nw


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary sp x sp selection pattern with exactly p*p ones."""

    bits: np.ndarray
    p: int
    s: int

    def __post_init__(self):
        bits = np.asarray(self.bits).astype(bool)
        sp = self.p * self.s
        if bits.shape != (sp, sp):
            raise MaskError(f"mask must be {sp}x{sp} for p={self.p}, s={self.s}, got {bits.shape}")
        ones = int(bits.sum())
        if ones != self.p * self.p:
            raise MaskError(f"mask must have exactly p^2={self.p * self.p} ones, got {ones}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return self.p == other.p and self.s == other.s and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.p, self.s, self.bits.tobytes()))


def window_partition(x: np.ndarray, grid: WindowGrid) -> np.ndarray:
    """(n, c, H, W) -> (n * nH * nW, c, p, p), windows in row-major (i, j) order."""
    n, c, h, w = x.shape
    if (h, w) != (grid.height, grid.width):
        raise ShapeError(f"tensor {x.shape} does not match grid {grid.height}x{grid.width}")
    p = grid.p
    y = x.reshape(n, c, grid.nh, p, grid.nw, p).transpose(0, 2, 4, 1, 3, 5)
    return np.ascontiguousarray(y.reshape(n * grid.count, c, p, p))


def window_merge(windows: np.ndarray, grid: WindowGrid) -> np.ndarray:
    b, c, p, _ = windows.shape
    if b % grid.count or p != grid.p:
        raise ShapeError(f"{b} windows of size {p} do not tile grid {grid}")
    n = b // grid.count
    y = windows.reshape(n, grid.nh, grid.nw, c, p, p).transpose(0, 3, 1, 4, 2, 5)
    return np.ascontiguousarray(y.reshape(n, c, grid.height, grid.width))


def window_expand(windows: np.ndarray, grid: WindowGrid) -> np.ndarray:
    """Replace window (i, j) by the s x s block of windows starting at (i, j).

    Output shape (n * nH * nW, c, sp, sp); window (i + a, j + b) (wrapped) sits
    at local rows [a*p, (a+1)*p) and columns [b*p, (b+1)*p).
    """
    b, c, p, _ = windows.shape
    if b % grid.count or p != grid.p:
        raise ShapeError(f"{b} windows of size {p} do not tile grid {grid}")
    n, s = b // grid.count, grid.s
    win = windows.reshape(n, grid.nh, grid.nw, c, p, p)
    out = np.empty((n, grid.nh, grid.nw, c, s, p, s, p), dtype=windows.dtype)
    for a in range(s):
        for bb in range(s):
            out[:, :, :, :, a, :, bb, :] = np.roll(win, shift=(-a, -bb), axis=(1, 2))
    return out.reshape(b, c, s * p, s * p)


def mask_from_assignment(phi, p: int, s: int) -> Mask:
    """Mask with a one at (a*p + x, b*p + y) iff phi(x, y) == (a, b).

    ``phi`` is a callable ``(x, y) -> (a, b)`` or an integer array of shape
    (p, p, 2).
    """
    if callable(phi):
        table = np.array([[phi(x, y) for y in range(p)] for x in range(p)], dtype=np.int64)
    else:
        table = np.asarray(phi, dtype=np.int64)
    if table.shape != (p, p, 2):
        raise MaskError(f"assignment must have shape ({p}, {p}, 2), got {table.shape}")
    if table.min() < 0 or table.max() >= s:
        raise MaskError(f"assignment sub-block indices must lie in [0, {s})")
    bits = np.zeros((s * p, s * p), dtype=bool)
    xs, ys = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
    bits[table[..., 0] * p + xs, table[..., 1] * p + ys] = True
    return Mask(bits, p, s)


def sparse_mask(p: int, s: int) -> Mask:
    """Maximally spread non-volatile mask: phi(x, y) = (x mod s, y mod s)."""
    return mask_from_assignment(lambda x, y: (x % s, y % s), p, s)


def dense_mask(p: int, s: int) -> Mask:
    """Dense p x p block in the top-left sub-block; equivalent to local windows."""
    return mask_from_assignment(lambda x, y: (0, 0), p, s)


def global_stride_mask(p: int, s: int) -> Mask:
    sp = s * p
    r = np.arange(sp)
    bits = (r[:, None] % s == 0) & (r[None, :] % s == 0)
    return Mask(bits, p, s)


def coverage_map(mask: Mask) -> np.ndarray:
    """(p, p) count of sub-blocks selecting each local window coordinate."""
    p, s = mask.p, mask.s
    return mask.bits.reshape(s, p, s, p).sum(axis=(0, 2)).astype(np.int64)


def beta(mask: Mask) -> float:
    """Non-volatility drop rate: fraction of window positions never sampled."""
    covered = int((coverage_map(mask) >= 1).sum())
    return 1.0 - covered / (mask.p * mask.p)


def is_non_volatile(mask: Mask) -> bool:
    return beta(mask) == 0.0


@dataclass(frozen=True, eq=False)
class IndexPlan:
    """Gather/scatter map certified to be a permutation of the H*W pixels.

    ``gather[k]`` lists the flat pixel indices (row * W + col) of the p*p tokens
    drawn for expanded window k, row-major over the mask's ones.
    """

    grid: WindowGrid
    gather: np.ndarray   # (nH * nW, p * p)
    scatter: np.ndarray  # (H * W,) inverse permutation of gather.ravel()

    @property
    def rows(self) -> np.ndarray:
        return self.gather // self.grid.width

    @property
    def cols(self) -> np.ndarray:
        return self.gather % self.grid.width

    def gather_tokens(self, x: np.ndarray) -> np.ndarray:
        """(n, c, H, W) -> (n * nWin, c, p*p)."""
        n, c = x.shape[:2]
        t = x.reshape(n, c, -1)[:, :, self.gather]  # n, c, nWin, t
        return np.ascontiguousarray(t.transpose(0, 2, 1, 3).reshape(n * self.grid.count, c, -1))

    def scatter_tokens(self, tokens: np.ndarray, n: int) -> np.ndarray:
        """Inverse of :meth:`gather_tokens`."""
        c = tokens.shape[1]
        g = self.grid
        flat = tokens.reshape(n, g.count, c, -1).transpose(0, 2, 1, 3).reshape(n, c, -1)
        return np.ascontiguousarray(flat[:, :, self.scatter].reshape(n, c, g.height, g.width))


def selection_indices(mask: Mask, grid: WindowGrid) -> IndexPlan:
    if (mask.p, mask.s) != (grid.p, grid.s):
        raise MaskError(f"mask (p={mask.p}, s={mask.s}) does not match grid (p={grid.p}, s={grid.s})")
    if beta(mask) > 0:
        raise MaskError(f"mask violates non-volatility (beta={beta(mask):.4f})")
    if coverage_map(mask).max() > 1:
        raise MaskError("mask over-covers")
    return _plan(mask.bits.tobytes(), grid)


@lru_cache(maxsize=64)
def _plan(bits_bytes: bytes, grid: WindowGrid) -> IndexPlan:
    p, s = grid.p, grid.s
    bits = np.frombuffer(bits_bytes, dtype=bool).reshape(s * p, s * p)
    r, c = np.nonzero(bits)  # row-major order
    a, x = np.divmod(r, p)
    b, y = np.divmod(c, p)
    i = np.arange(grid.nh)[:, None, None]
    j = np.arange(grid.nw)[None, :, None]
    rows = ((i + a) % grid.nh) * p + x
    cols = ((j + b) % grid.nw) * p + y
    gather = (rows * grid.width + cols).reshape(grid.count, p * p)
    flat = gather.ravel()
    scatter = np.empty_like(flat)
    scatter[flat] = np.arange(flat.size)
    if not np.array_equal(np.sort(flat), np.arange(grid.height * grid.width)):
        raise MaskError("mask over-covers")
    gather.setflags(write=False)
    scatter.setflags(write=False)
    return IndexPlan(grid, gather, scatter)


def format_mask(mask: Mask) -> str:
    lines = [f"{mask.p} {mask.s}"]
    lines += ["".join("1" if v else "0" for v in row) for row in mask.bits]
    return "\n".join(lines) + "\n"


def parse_mask(text: str) -> Mask:
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty mask file")
    try:
        p, s = (int(v) for v in lines[0].split())
    except ValueError:
        raise FormatError(f"mask header must be 'p s', got {lines[0]!r}") from None
    if p < 1 or s < 1:
        raise FormatError(f"mask header values must be positive, got p={p} s={s}")
    sp = p * s
    rows = lines[1:]
    if len(rows) != sp or any(len(row) != sp or set(row) - {"0", "1"} for row in rows):
        raise FormatError(f"mask body must be {sp} lines of {sp} characters in {{0,1}}")
    bits = np.array([[ch == "1" for ch in row] for row in rows], dtype=bool)
    return Mask(bits, p, s)


def load_mask(path) -> Mask:
    return parse_mask(Path(path).read_text())


def save_mask(mask: Mask, path) -> None:
    Path(path).write_text(format_mask(mask))
