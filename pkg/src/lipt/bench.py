"""Wall-clock latency of the forward pass."""
from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

from .model import LIPTConfig, build, count_params_and_macs, forward, fuse_model
from .tensor import rng_uniform


@dataclass
class BenchReport:
    config: str
    height: int
    width: int
    fused: bool
    samples: list[float]
    params: int
    macs: int

    @property
    def min(self) -> float:
        return min(self.samples)

    @property
    def median(self) -> float:
        return statistics.median(self.samples)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.samples)

    def lines(self) -> list[str]:
        form = "fused" if self.fused else "unfused"
        return [
            f"config={self.config} input={self.width}x{self.height} form={form}",
            f"params={self.params} macs={self.macs}",
            "samples_s=" + ",".join(f"{s:.4f}" for s in self.samples),
            f"min_s={self.min:.4f} median_s={self.median:.4f} mean_s={self.mean:.4f}",
        ]


def bench(config: LIPTConfig, height: int, width: int, fused: bool = False,
          runs: int = 5, seed: int = 0) -> BenchReport:
    """Time ``runs`` forwards at the given input size after one warmup run."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    weights = build(config, seed)
    if fused:
        weights = fuse_model(weights)
    x = rng_uniform(seed + 1, (1, config.in_channels, height, width))
    forward(x, weights, config)
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        forward(x, weights, config)
        samples.append(time.perf_counter() - t0)
    params, macs = count_params_and_macs(config, height, width, fused=fused)
    return BenchReport(config.name, height, width, fused, samples, params, macs)
