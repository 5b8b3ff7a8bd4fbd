"""End-to-end throughput: forward + decode + NMS, batch 1, single stream."""
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from ..tensor import kernels, no_grad
from .decode import postprocess


def hardware_info():
    return {
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "system": f"{platform.system()} {platform.release()}",
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
        "kernel_backend": kernels.BACKEND,
    }


@dataclass
class BenchResult:
    name: str
    imgsz: int
    iters: int
    total_s: float
    latencies_ms: list = field(repr=False, default_factory=list)

    @property
    def fps(self):
        return self.iters / self.total_s if self.total_s > 0 else float("inf")

    @property
    def mean_ms(self):
        return float(np.mean(self.latencies_ms))

    @property
    def p50_ms(self):
        return float(np.percentile(self.latencies_ms, 50))

    @property
    def p95_ms(self):
        return float(np.percentile(self.latencies_ms, 95))

    def kv_lines(self, prefix=""):
        return [f"{prefix}fps={self.fps:.3f}", f"{prefix}mean_ms={self.mean_ms:.3f}",
                f"{prefix}p50_ms={self.p50_ms:.3f}", f"{prefix}p95_ms={self.p95_ms:.3f}",
                f"{prefix}iters={self.iters}"]


def fps_bench(model, imgsz=320, warmup=2, iters=10, conf=0.25, iou=0.7, seed=0, name="model"):
    if warmup < 1:
        raise ValueError("warmup must be >= 1")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    model.eval()
    x = np.random.default_rng(seed).uniform(0, 1, (1, 3, imgsz, imgsz)).astype(np.float32)
    reg_max = model.cfg.reg_max

    def once():
        postprocess(model(x), conf, iou, reg_max, model.strides)

    with no_grad():
        for _ in range(warmup):
            once()
        lat = []
        start = time.perf_counter()
        for _ in range(iters):
            t0 = time.perf_counter()
            once()
            lat.append((time.perf_counter() - t0) * 1e3)
        total = time.perf_counter() - start
    return BenchResult(name, imgsz, iters, total, lat)


def format_bench(results, baseline=None):
    """Human table plus relative FPS against ``baseline`` (first result by default)."""
    base = baseline or results[0]
    lines = [f"{'variant':<28} {'FPS':>8} {'mean ms':>9} {'p50 ms':>8} {'p95 ms':>8} {'rel':>6}"]
    for r in results:
        lines.append(f"{r.name:<28} {r.fps:>8.2f} {r.mean_ms:>9.2f} {r.p50_ms:>8.2f}"
                     f" {r.p95_ms:>8.2f} {r.fps / base.fps:>6.3f}")
    return "\n".join(lines)
