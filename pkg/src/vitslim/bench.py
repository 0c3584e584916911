"""Wall-clock throughput of slimming inference."""

from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from . import vit
from .errors import MeasurementError
from .flops import count_flops
from .inference import SlimEngine

MIN_WARMUP = 3
MIN_TIMED = 10


@dataclass
class BenchReport:
    images_per_second: float
    batch: int
    warmup_iters: int
    timed_iters: int
    baseline_rate: float | None = None
    seconds: tuple = ()

    @property
    def speedup(self) -> float | None:
        if self.baseline_rate is None:
            return None
        return self.images_per_second / self.baseline_rate

    def to_dict(self) -> dict:
        out = asdict(self)
        out["seconds"] = list(self.seconds)
        out["speedup"] = self.speedup
        return out


def _images(config: vit.ViTConfig, batch: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    side = config.image_side
    return rng.random((batch, side, side, config.channels)).astype(np.float32)


def measure_throughput(engine: SlimEngine, batch: int = 8, iters: int = MIN_TIMED, warmup: int = MIN_WARMUP,
                       images=None, blas_threads: int | None = 1, seed: int = 0,
                       clock=time.perf_counter) -> BenchReport:
    """Median images/second over ``iters`` timed batches after ``warmup`` discarded ones.

    BLAS is pinned to ``blas_threads`` (one by default) for the duration, so
    the caller must not run other work in this process while it times.
    """
    if iters < MIN_TIMED:
        raise MeasurementError(f"need at least {MIN_TIMED} timed iterations, got {iters}")
    if warmup < MIN_WARMUP:
        raise MeasurementError(f"need at least {MIN_WARMUP} warm-up iterations, got {warmup}")
    if images is None:
        images = _images(engine.config, batch, seed)
    batch = len(images)
    samples = []
    with threadpool_limits(limits=blas_threads):
        for _ in range(warmup):
            engine.infer(images)
        for _ in range(iters):
            start = clock()
            engine.infer(images)
            samples.append(clock() - start)
    median = statistics.median(samples)
    if median <= 0:
        raise MeasurementError(f"timer resolution too coarse: median batch time {median!r} s")
    return BenchReport(batch / median, batch, warmup, iters, seconds=tuple(samples))


def throughput_sweep(weights: vit.ModelWeights, rhos=(1.0, 0.9, 0.8, 0.7), batch: int = 8,
                     iters: int = MIN_TIMED, warmup: int = MIN_WARMUP, blas_threads: int | None = 1,
                     seed: int = 0) -> list:
    """Throughput and FLOPs per keep rate, each against the first entry as baseline.

    Keep rates are timed in interleaved rounds so slow drift of the machine
    does not favour whichever rate happens to run first.
    """
    images = _images(weights.config, batch, seed)
    configs = [weights.config.replace(rho=float(r)) for r in rhos]
    engines = [SlimEngine(weights, c) for c in configs]
    times = [[] for _ in engines]
    with threadpool_limits(limits=blas_threads):
        for engine in engines:
            for _ in range(warmup):
                engine.infer(images)
        for _ in range(iters):
            for engine, bucket in zip(engines, times):
                start = time.perf_counter()
                engine.infer(images)
                bucket.append(time.perf_counter() - start)
    rows = []
    base_rate = None
    for rho, config, bucket in zip(rhos, configs, times):
        median = statistics.median(bucket)
        if median <= 0:
            raise MeasurementError(f"timer resolution too coarse at rho={rho}")
        rate = batch / median
        base_rate = base_rate or rate
        report = BenchReport(rate, batch, warmup, iters, base_rate, tuple(bucket))
        rows.append({"rho": float(rho), "gflops": count_flops(config).gflops, **report.to_dict()})
    return rows


def ordering_matches(rows: list) -> bool:
    """True when sorting by throughput (fastest first) equals sorting by FLOPs (cheapest first)."""
    by_rate = sorted(range(len(rows)), key=lambda i: -rows[i]["images_per_second"])
    by_flops = sorted(range(len(rows)), key=lambda i: rows[i]["gflops"])
    return by_rate == by_flops


def format_table(rows: list) -> str:
    """Aligned plain-text table of a sweep."""
    head = f"{'rho':>5} {'GFLOPs':>8} {'img/s':>10} {'speedup':>8}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['rho']:>5.2f} {r['gflops']:>8.3f} {r['images_per_second']:>10.2f} {r['speedup']:>8.3f}")
    return "\n".join(lines)
