"""Hard patch slimming at inference time.

Lives are predicted once, from the output of layer ``t_base``. From then on
each layer whose patch count shrinks gathers the top-``n_t`` patches by life
into a fresh buffer. Because the smooth weight is monotone in the life,
ranking by life is the same as ranking by weight, so weights are never
evaluated here.
"""

from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import tensor as tm
from . import vit
from .errors import ContractError
from .life import LifeProbe, LifeVector, life_tensor
from .schedule import SlimSchedule
from .tensor import Tensor


def rank_patches(tau: np.ndarray) -> np.ndarray:
    """Patch indices by descending life; ties go to the smaller index."""
    return np.argsort(-np.asarray(tau), axis=-1, kind="stable")


@dataclass
class SurvivorSets:
    """Per-layer retained patches (0-based, in rank order); CLS is implicit."""

    patches: list

    def __getitem__(self, t: int) -> np.ndarray:
        return self.patches[t - 1]

    def __len__(self) -> int:
        return len(self.patches)

    def tokens(self, t: int) -> np.ndarray:
        """Token indices for layer ``t``, CLS (token 0) first."""
        return np.concatenate([[0], self.patches[t - 1] + 1])

    def mask(self, t: int, N: int) -> np.ndarray:
        out = np.zeros(N, dtype=bool)
        out[self.patches[t - 1]] = True
        return out


def select_survivors(lives, schedule: SlimSchedule) -> SurvivorSets:
    tau = np.asarray(getattr(lives, "tau", lives), dtype=np.float64)
    if tau.ndim != 1 or len(tau) != schedule.N:
        raise ContractError(f"expected {schedule.N} lives, got shape {tau.shape}")
    if max(schedule.n) > schedule.N:
        raise ContractError(f"schedule keeps more than {schedule.N} patches")
    order = rank_patches(tau)
    return SurvivorSets([order[:n].copy() for n in schedule.n])


def _env_threads() -> int:
    try:
        return max(1, int(os.environ.get("VITSLIM_THREADS", "1")))
    except ValueError:
        return 1


class SlimEngine:
    """Batched slimming inference with read-only weights.

    ``config`` may override the slimming fields (rho, t_slim, ...) of the
    weights' own config without touching the parameters.
    """

    def __init__(self, weights: vit.ModelWeights, config: vit.ViTConfig | None = None,
                 dtype=np.float32, threads: int | None = None):
        self.config = config or weights.config
        params = weights.params if weights.dtype == dtype else weights.astype(dtype).params
        self.weights = vit.ModelWeights(self.config, params)
        self.schedule = SlimSchedule.from_config(self.config)
        self.threads = threads or _env_threads()
        self.probe = LifeProbe()
        self.gathers = 0
        self.images_seen = 0
        self._lock = threading.Lock()

    def infer(self, images) -> np.ndarray:
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        if self.threads > 1 and len(images) > 1:
            chunks = np.array_split(images, min(self.threads, len(images)))
            with ThreadPoolExecutor(self.threads) as pool:
                return np.concatenate(list(pool.map(lambda c: self._run(c)[0], chunks)))
        return self._run(images)[0]

    def infer_with_lives(self, images) -> tuple:
        """Logits plus the (B, N) life matrix (None when nothing is slimmed)."""
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[None]
        return self._run(images)

    def _run(self, images: np.ndarray) -> tuple:
        w, cfg, sched = self.weights, self.config, self.schedule
        with self._lock:
            self.images_seen += len(images)
        x = vit.embed(images.astype(w.dtype, copy=False), w)
        for t in range(1, cfg.t_base + 1):
            x = vit.block_forward(x, t, w)
        tau = None
        if sched.slims:
            probe = LifeProbe()
            tau = life_tensor(x, w, sched.mu, sched.sigma, probe, cfg.t_base).data
            order = rank_patches(tau)
            B, M = tau.shape[0], cfg.N + 1
            layout = np.broadcast_to(np.arange(M), (B, M))
            rows = np.arange(B)[:, None]
            with self._lock:
                self.probe.calls += probe.calls
                self.probe.images += probe.images
                self.probe.layers.extend(probe.layers)
        current = cfg.N
        for t in range(cfg.t_base + 1, cfg.T + 1):
            n_t = sched.count(t)
            if n_t < current:
                keep = np.concatenate([np.zeros((B, 1), dtype=np.int64), order[:, :n_t] + 1], axis=1)
                inverse = np.empty((B, M), dtype=np.int64)
                inverse[rows, layout] = np.arange(layout.shape[1])
                x = tm.gather_rows(x, inverse[rows, keep])
                layout, current = keep, n_t
                with self._lock:
                    self.gathers += 1
            x = vit.block_forward(x, t, w)
        return vit.classify(x, w).data, tau

    def lives(self, images) -> list:
        _, tau = self.infer_with_lives(images)
        if tau is None:
            return []
        return [LifeVector(row.astype(np.float64), float(self.config.T)) for row in tau]


def infer(images, weights: vit.ModelWeights, config: vit.ViTConfig | None = None, dtype=np.float32) -> np.ndarray:
    return SlimEngine(weights, config, dtype=dtype).infer(images)


def masked_forward(images, weights: vit.ModelWeights, config: vit.ViTConfig | None = None,
                   dtype=np.float32) -> np.ndarray:
    """Full-sequence forward where dropped patches get weight 0 instead of being removed.

    The binary weights come from the same survivor sets :class:`SlimEngine`
    uses, so the two must agree up to rounding.
    """
    config = config or weights.config
    if weights.dtype != dtype:
        weights = weights.astype(dtype)
    w = vit.ModelWeights(config, weights.params)
    sched = SlimSchedule.from_config(config)
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    x = vit.embed(images.astype(dtype, copy=False), w)
    for t in range(1, config.t_base + 1):
        x = vit.block_forward(x, t, w)
    if sched.slims:
        tau = life_tensor(x, w, sched.mu, sched.sigma).data
        order = rank_patches(tau)
    B, M = x.shape[0], config.N + 1
    for t in range(config.t_base + 1, config.T + 1):
        beta = None
        if sched.slims:
            mask = np.zeros((B, M), dtype=dtype)
            mask[:, 0] = 1
            np.put_along_axis(mask, order[:, : sched.count(t)] + 1, 1, axis=1)
            beta = Tensor(mask)
        x = vit.block_forward(x, t, w, beta)
    return vit.classify(x, w).data


def count_slim_ops(engine: SlimEngine) -> dict:
    """Life-module invocations per image versus a per-layer scorer's T' calls."""
    per_layer = len(engine.config.t_slim) if engine.schedule.slims else 0
    seen = engine.images_seen
    ours = engine.probe.images / seen if seen else 0.0
    return {
        "images": seen,
        "life_module_calls": ours,
        "per_layer_scorer_calls_baseline": per_layer,
        "ratio": per_layer / ours if ours else None,
        "life_layers": sorted(set(engine.probe.layers)),
    }
