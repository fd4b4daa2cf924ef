"""Network configuration, weights, forward pass, fusion, losses, accounting."""
from __future__ import annotations

import dataclasses
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import NVSMWeights, WindowMSAWeights, default_heads, nvsm_sa
from .errors import ConfigError, FormatError, ShapeError
from .hrm import RepConvWeights, HRMWeights, SobelBranch, fuse_hrm, repconv_macs, hrm_forward
from .masks import Mask, WindowGrid, dense_mask, sparse_mask
from .tensor import ConvWeights, SplitMix64, conv2d, crop, pad_reflect, pixel_shuffle

__all__ = [
    "LIPTConfig",
    "PRESETS",
    "BlockWeights",
    "LIPTWeights",
    "build",
    "forward",
    "fuse_model",
    "l1_loss",
    "charbonnier_loss",
    "charbonnier_grad",
    "count_params_and_macs",
    "param_count",
]


@dataclass(frozen=True)
class LIPTConfig:
    blocks: int
    channels: int
    window: int
    expansion: int = 2
    scale: int = 4
    in_channels: int = 3
    cb_per_msa: int = 3
    heads: int | None = None
    enable_slwa: bool = True
    enable_dlwa: bool = True
    enable_sobel: bool = True
    hrm_off: bool = False
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        if self.blocks < 1 or self.cb_per_msa < 1:
            raise ConfigError("blocks and cb_per_msa must be >= 1")
        if self.channels < 2 or self.channels % 2:
            raise ConfigError(f"channels must be even, got {self.channels}")
        if self.window < 2 or self.window % 2:
            raise ConfigError(f"window size must be even, got {self.window}")
        if self.expansion < 1:
            raise ConfigError(f"expansion must be >= 1, got {self.expansion}")
        if self.scale not in (1, 2, 3, 4):
            raise ConfigError(f"scale must be one of 1, 2, 3, 4, got {self.scale}")
        if self.in_channels < 1:
            raise ConfigError("in_channels must be >= 1")
        if not (self.enable_slwa or self.enable_dlwa):
            raise ConfigError("at least one of enable_slwa / enable_dlwa must be set")
        for width in self.path_widths():
            if width % self.path_heads(width):
                raise ConfigError(f"attention width {width} not divisible by {self.path_heads(width)} heads")

    def path_widths(self) -> list[int]:
        if self.enable_slwa and self.enable_dlwa:
            return [self.channels // 2, self.channels // 2]
        return [self.channels]

    def path_heads(self, width: int) -> int:
        return self.heads if self.heads is not None else default_heads(width)

    def replace(self, **changes) -> "LIPTConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def load(cls, spec: str, **overrides) -> "LIPTConfig":
        """Preset name (tiny/small/base) or path to a JSON file of fields."""
        if spec.lower() in PRESETS:
            return PRESETS[spec.lower()].replace(**overrides)
        try:
            data = json.loads(Path(spec).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"config {spec}: {exc}") from None
        if "preset" in data:
            base = dataclasses.asdict(PRESETS[data.pop("preset").lower()])
            data = {**base, **data}
        data.setdefault("name", Path(spec).stem)
        try:
            return cls(**{**data, **overrides})
        except TypeError as exc:
            raise ConfigError(f"config {spec}: {exc}") from None


PRESETS = {
    "tiny": LIPTConfig(blocks=8, channels=24, window=8, name="tiny"),
    "small": LIPTConfig(blocks=10, channels=64, window=8, name="small"),
    "base": LIPTConfig(blocks=22, channels=144, window=16, name="base"),
}


@dataclass
class BlockWeights:
    hrms: list[HRMWeights]
    attn: NVSMWeights


@dataclass
class LIPTWeights:
    shallow: ConvWeights
    blocks: list[BlockWeights]
    recon: ConvWeights

    @property
    def fused(self) -> bool:
        return all(h.fused for b in self.blocks for h in b.hrms)

    @property
    def partially_fused(self) -> bool:
        return any(h.fused for b in self.blocks for h in b.hrms)

    @property
    def in_channels(self) -> int:
        return self.shallow.c_in

    @property
    def channels(self) -> int:
        return self.shallow.c_out

    @property
    def scale(self) -> int:
        r = math.isqrt(self.recon.c_out // self.in_channels)
        return r

    def named(self) -> dict[str, np.ndarray]:
        """Every tensor under a unique dotted name (serialization order)."""
        out: dict[str, np.ndarray] = {}
        _put_conv(out, "shallow", self.shallow)
        for l, blk in enumerate(self.blocks):
            for k, hrm in enumerate(blk.hrms):
                for g, rc in (("first", hrm.first), ("second", hrm.second)):
                    _put_repconv(out, f"blocks.{l}.hrm.{k}.{g}", rc)
            _put_attn(out, f"blocks.{l}.attn", blk.attn)
        _put_conv(out, "recon", self.recon)
        return out

    @classmethod
    def from_named(cls, named: dict[str, np.ndarray]) -> "LIPTWeights":
        try:
            return _from_named(named)
        except KeyError as exc:
            raise FormatError(f"weight file is missing tensor {exc}") from None

    def check_config(self, config: LIPTConfig) -> None:
        """Raise if these weights cannot run under ``config``."""
        problems = []
        if self.in_channels != config.in_channels:
            problems.append(f"in_channels {self.in_channels} != {config.in_channels}")
        if self.channels != config.channels:
            problems.append(f"channels {self.channels} != {config.channels}")
        if len(self.blocks) != config.blocks:
            problems.append(f"blocks {len(self.blocks)} != {config.blocks}")
        if self.recon.c_out != config.in_channels * config.scale ** 2:
            problems.append(f"weights are for scale x{self.scale}, config asks x{config.scale}")
        if self.blocks:
            b0 = self.blocks[0]
            if len(b0.hrms) != config.cb_per_msa:
                problems.append(f"cb_per_msa {len(b0.hrms)} != {config.cb_per_msa}")
            if (b0.attn.p, b0.attn.s) != (config.window, config.expansion):
                problems.append(
                    f"window/expansion ({b0.attn.p}, {b0.attn.s}) != ({config.window}, {config.expansion})"
                )
        if problems:
            raise ConfigError("weights do not match config: " + "; ".join(problems))


# -- naming -----------------------------------------------------------------

def _put_conv(out, prefix, cw: ConvWeights):
    out[f"{prefix}.weight"] = cw.kernel
    out[f"{prefix}.bias"] = cw.bias


def _put_repconv(out, prefix, rc):
    if isinstance(rc, ConvWeights):
        _put_conv(out, f"{prefix}.rep", rc)
        return
    _put_conv(out, f"{prefix}.conv3", rc.conv3)
    if rc.conv1 is not None:
        _put_conv(out, f"{prefix}.conv1", rc.conv1)
    if rc.conv1_3 is not None:
        _put_conv(out, f"{prefix}.conv1_3.pre", rc.conv1_3[0])
        _put_conv(out, f"{prefix}.conv1_3.conv3", rc.conv1_3[1])
    if rc.sobel is not None:
        sb = rc.sobel
        _put_conv(out, f"{prefix}.sobel.kx", sb.kx)
        _put_conv(out, f"{prefix}.sobel.ky", sb.ky)
        for name in ("sx", "sy", "bdx", "bdy"):
            out[f"{prefix}.sobel.{name}"] = getattr(sb, name)
    if rc.avg_pre is not None:
        _put_conv(out, f"{prefix}.avg_pre", rc.avg_pre)


def _put_attn(out, prefix, attn: NVSMWeights):
    for name, path in (("slwa", attn.slwa), ("dlwa", attn.dlwa)):
        if path is None:
            continue
        for proj in ("q", "k", "v"):
            _put_conv(out, f"{prefix}.{name}.{proj}", getattr(path, proj))
        out[f"{prefix}.{name}.heads"] = np.array([path.heads], dtype=np.float32)
    _put_conv(out, f"{prefix}.proj", attn.proj)
    out[f"{prefix}.m_sl"] = attn.m_sl.bits.astype(np.float32)
    out[f"{prefix}.m_dl"] = attn.m_dl.bits.astype(np.float32)


def _is_meta(name: str) -> bool:
    """Non-learnable entries: head counts and sampling masks."""
    return name.endswith((".heads", ".m_sl", ".m_dl"))


def _get_conv(named, prefix, groups=1):
    return ConvWeights(named[f"{prefix}.weight"], named[f"{prefix}.bias"], groups)


def _get_repconv(named, prefix):
    if f"{prefix}.rep.weight" in named:
        return _get_conv(named, f"{prefix}.rep")
    rc = RepConvWeights(conv3=_get_conv(named, f"{prefix}.conv3"))
    if f"{prefix}.conv1.weight" in named:
        rc.conv1 = _get_conv(named, f"{prefix}.conv1")
    if f"{prefix}.conv1_3.pre.weight" in named:
        rc.conv1_3 = (_get_conv(named, f"{prefix}.conv1_3.pre"),
                      _get_conv(named, f"{prefix}.conv1_3.conv3"))
    if f"{prefix}.sobel.kx.weight" in named:
        rc.sobel = SobelBranch(
            _get_conv(named, f"{prefix}.sobel.kx"),
            _get_conv(named, f"{prefix}.sobel.ky"),
            *(named[f"{prefix}.sobel.{n}"] for n in ("sx", "sy", "bdx", "bdy")),
        )
    if f"{prefix}.avg_pre.weight" in named:
        rc.avg_pre = _get_conv(named, f"{prefix}.avg_pre")
    return rc


def _mask_from_tensor(bits: np.ndarray) -> Mask:
    ones = int(round(float(bits.sum())))
    p = math.isqrt(ones)
    if p * p != ones or bits.ndim != 2 or bits.shape[0] % p:
        raise FormatError(f"stored mask of shape {bits.shape} with {ones} ones is malformed")
    return Mask(bits > 0.5, p, bits.shape[0] // p)


def _get_attn(named, prefix):
    paths = {}
    for name in ("slwa", "dlwa"):
        if f"{prefix}.{name}.q.weight" not in named:
            paths[name] = None
            continue
        heads = int(named[f"{prefix}.{name}.heads"][0])
        paths[name] = WindowMSAWeights(
            *(_get_conv(named, f"{prefix}.{name}.{p}") for p in ("q", "k", "v")), heads=heads
        )
    return NVSMWeights(
        paths["slwa"], paths["dlwa"], _get_conv(named, f"{prefix}.proj"),
        _mask_from_tensor(named[f"{prefix}.m_sl"]), _mask_from_tensor(named[f"{prefix}.m_dl"]),
    )


def _from_named(named):
    block_ids = sorted({int(m.group(1)) for n in named if (m := re.match(r"blocks\.(\d+)\.", n))})
    if block_ids != list(range(len(block_ids))):
        raise FormatError(f"block indices are not contiguous: {block_ids}")
    blocks = []
    for l in block_ids:
        hrm_ids = sorted({int(m.group(1)) for n in named
                          if (m := re.match(rf"blocks\.{l}\.hrm\.(\d+)\.", n))})
        hrms = [HRMWeights(_get_repconv(named, f"blocks.{l}.hrm.{k}.first"),
                           _get_repconv(named, f"blocks.{l}.hrm.{k}.second")) for k in hrm_ids]
        blocks.append(BlockWeights(hrms, _get_attn(named, f"blocks.{l}.attn")))
    w = LIPTWeights(_get_conv(named, "shallow"), blocks, _get_conv(named, "recon"))
    known = set(w.named())
    extra = set(named) - known
    if extra:
        raise FormatError(f"unexpected tensors in weight file: {sorted(extra)[:5]}")
    return w


# -- construction -------------------------------------------------------------

class _Init:
    """Kaiming-uniform (fan-in) kernels and zero biases from one SplitMix64 stream."""

    def __init__(self, seed: int):
        self.rng = SplitMix64(seed)

    def conv(self, c_out, c_in, k, gain=1.0) -> ConvWeights:
        bound = gain * math.sqrt(6.0 / (c_in * k * k))
        u = self.rng.uniform(c_out * c_in * k * k)
        kernel = ((2.0 * u - 1.0) * bound).astype(np.float32).reshape(c_out, c_in, k, k)
        return ConvWeights(kernel, np.zeros(c_out, np.float32))

    def repconv(self, c, config: LIPTConfig, gain) -> RepConvWeights:
        if config.hrm_off:
            return RepConvWeights(conv3=self.conv(c, c, 3, gain))
        n_branches = 5 if config.enable_sobel else 4
        g = gain / math.sqrt(n_branches)
        rc = RepConvWeights(conv3=self.conv(c, c, 3, g))
        rc.conv1 = self.conv(c, c, 1, g)
        rc.conv1_3 = (self.conv(c, c, 1), self.conv(c, c, 3, g))
        if config.enable_sobel:
            s = np.full(c, g / math.sqrt(8.0), np.float32)  # each Sobel kernel has norm sqrt(8)
            rc.sobel = SobelBranch(self.conv(c, c, 1), self.conv(c, c, 1), s, s.copy(),
                                   np.zeros(c, np.float32), np.zeros(c, np.float32))
        rc.avg_pre = self.conv(c, c, 1, 3.0 * g)  # averaging kernel has norm 1/3
        return rc


def build(config: LIPTConfig, seed: int = 0) -> LIPTWeights:
    """Deterministic random weights.

    Residual branches (the second rep-conv stage of every HRM and each
    attention output projection) are scaled by 1/(number of residual units) and branch kernels
    by 1/sqrt(number of branches), which keeps activations O(1) at every depth.
    """
    init = _Init(seed)
    c = config.channels
    units = config.blocks * (config.cb_per_msa + 1)
    res_gain = 1.0 / units
    shallow = init.conv(c, config.in_channels, 3)
    m_sl = sparse_mask(config.window, config.expansion)
    m_dl = dense_mask(config.window, config.expansion)
    blocks = []
    for _ in range(config.blocks):
        hrms = [HRMWeights(init.repconv(c, config, 1.0), init.repconv(c, config, res_gain))
                for _ in range(config.cb_per_msa)]
        paths = []
        for width in config.path_widths():
            paths.append(WindowMSAWeights(init.conv(width, width, 1), init.conv(width, width, 1),
                                          init.conv(width, width, 1), heads=config.path_heads(width)))
        if config.enable_slwa and config.enable_dlwa:
            slwa, dlwa = paths
        elif config.enable_slwa:
            slwa, dlwa = paths[0], None
        else:
            slwa, dlwa = None, paths[0]
        attn = NVSMWeights(slwa, dlwa, init.conv(c, c, 1, res_gain), m_sl, m_dl)
        blocks.append(BlockWeights(hrms, attn))
    recon = init.conv(config.in_channels * config.scale ** 2, c, 3)
    return LIPTWeights(shallow, blocks, recon)


def fuse_model(w: LIPTWeights) -> LIPTWeights:
    """Replace every HRM by its two single 3x3 convolutions."""
    if w.partially_fused:
        raise ConfigError("weights are already fused")
    blocks = [BlockWeights([fuse_hrm(h) for h in b.hrms], b.attn) for b in w.blocks]
    return LIPTWeights(w.shallow, blocks, w.recon)


# -- forward ------------------------------------------------------------------

def block_forward(x: np.ndarray, blk: BlockWeights, grid: WindowGrid) -> np.ndarray:
    """(k-1) HRMs, NVSM-SA, then the last HRM."""
    for hrm in blk.hrms[:-1]:
        x = hrm_forward(x, hrm)
    x = nvsm_sa(x, blk.attn, grid)
    return hrm_forward(x, blk.hrms[-1])


def forward(x: np.ndarray, w: LIPTWeights, config: LIPTConfig) -> np.ndarray:
    """Reconstruct from shallow + deep features (global skip) on an (n, in_channels, h, w) image batch."""
    w.check_config(config)
    n, c, h, wd = x.shape
    if c != config.in_channels:
        raise ShapeError(f"input {x.shape} has {c} channels, config expects {config.in_channels}")
    p, r = config.window, config.scale
    xp = pad_reflect(x, (-wd) % p, (-h) % p)
    grid = WindowGrid(p, config.expansion, xp.shape[2], xp.shape[3])
    fs = conv2d(xp, w.shallow)
    fd = fs
    for blk in w.blocks:
        fd = block_forward(fd, blk, grid)
    out = conv2d(fs + fd, w.recon)
    out = pixel_shuffle(out, r)
    return crop(out, h * r, wd * r)


# -- losses -------------------------------------------------------------------

def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"loss operands differ in shape: {pred.shape} vs {target.shape}")
    return pred, target


def l1_loss(pred, target) -> float:
    """Elementwise mean absolute error over the whole batch."""
    pred, target = _pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


def charbonnier_loss(pred, target, eps: float = 1e-3) -> float:
    """Mean of sqrt((pred - target)^2 + eps^2)."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    pred, target = _pair(pred, target)
    return float(np.mean(np.sqrt((pred - target) ** 2 + eps * eps)))


def charbonnier_grad(pred, target, eps: float = 1e-3) -> np.ndarray:
    """Gradient of :func:`charbonnier_loss` with respect to ``pred``."""
    pred, target = _pair(pred, target)
    d = pred - target
    return d / np.sqrt(d * d + eps * eps) / d.size


# -- accounting ---------------------------------------------------------------

def param_count(w: LIPTWeights) -> int:
    return sum(int(t.size) for name, t in w.named().items() if not _is_meta(name))


def _conv_params(c_out, c_in, k):
    return c_out * c_in * k * k + c_out


def _repconv_params(c, config: LIPTConfig, fused: bool) -> int:
    if fused or config.hrm_off:
        return _conv_params(c, c, 3)
    n = _conv_params(c, c, 3) + _conv_params(c, c, 1)           # conv3, conv1
    n += _conv_params(c, c, 1) + _conv_params(c, c, 3)          # conv1 -> conv3
    n += _conv_params(c, c, 1)                                  # conv1 -> avg
    if config.enable_sobel:
        n += 2 * _conv_params(c, c, 1) + 4 * c                  # kx, ky, sx, sy, bdx, bdy
    return n


def count_params_and_macs(config: LIPTConfig, height: int, width: int,
                          fused: bool = False) -> tuple[int, int]:
    """Exact learnable-parameter and multiply-accumulate counts.

    ``height`` x ``width`` is the input resolution; MACs are counted on the
    window-padded size the forward pass actually processes. Bias additions,
    ReLU and softmax are not MACs.
    """
    c, p, r, cin = config.channels, config.window, config.scale, config.in_channels
    hp, wp = height + (-height) % p, width + (-width) % p
    hw = hp * wp
    t = p * p
    n_windows = hw // t

    params = _conv_params(c, cin, 3) + _conv_params(cin * r * r, c, 3)
    macs = 9 * cin * c * hw + 9 * c * cin * r * r * hw

    rep_p = _repconv_params(c, config, fused)
    rep_m = repconv_macs(c, hp, wp, fused=fused, sobel=config.enable_sobel, branches=not config.hrm_off)
    attn_p = _conv_params(c, c, 1)
    attn_m = c * c * hw                                          # output projection
    for width_ in config.path_widths():
        attn_p += 3 * _conv_params(width_, width_, 1)
        attn_m += 3 * width_ * width_ * hw                       # q, k, v
        attn_m += 2 * n_windows * t * t * width_                 # q^T k and v a^T
    block_p = 2 * config.cb_per_msa * rep_p + attn_p
    block_m = 2 * config.cb_per_msa * rep_m + attn_m
    return params + config.blocks * block_p, macs + config.blocks * block_m
