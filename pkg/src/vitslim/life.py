"""One-shot patch life prediction from the layer-``t_base`` features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tm
from .errors import ContractError
from .tensor import Tensor

STD_FLOOR = 1e-6


@dataclass
class LifeVector:
    """Lives of one image's patches; the CLS life is pinned to ``T``."""

    tau: np.ndarray
    tau_cls: float

    def clamped(self, t_base: int, T: int) -> np.ndarray:
        return np.clip(self.tau, t_base, T)

    def __len__(self) -> int:
        return len(self.tau)


def bilinear_score(x_norm: Tensor, life_W: Tensor) -> Tensor:
    """``s_i = x_cls^T W x_i`` for every patch; (B, N+1, d) -> (B, N)."""
    single = x_norm.ndim == 2
    if single:
        x_norm = tm.reshape(x_norm, (1,) + x_norm.shape)
    cls = x_norm[:, 0:1, :]
    patches = x_norm[:, 1:, :]
    s = (cls @ life_W) @ tm.swap_last(patches)
    s = tm.reshape(s, (x_norm.shape[0], x_norm.shape[1] - 1))
    return tm.reshape(s, (-1,)) if single else s


def renormalize_to_life(s: Tensor, mu: float, sigma: float) -> Tensor:
    """Shift/scale scores so each row has mean ``mu`` and population std ``sigma``.

    The score std is floored at 1e-6, so constant scores map to ``mu``.
    """
    if not isinstance(s, Tensor):
        s = Tensor(s)
    if s.shape[-1] < 2:
        raise ContractError(f"life renormalisation needs at least 2 patches, got {s.shape[-1]}")
    if sigma < 0:
        raise ContractError(f"target std must be non-negative, got {sigma}")
    centered = s - tm.mean(s, axis=-1, keepdims=True)
    std = tm.sqrt(tm.mean(centered * centered, axis=-1, keepdims=True))
    return centered / tm.clamp_min(std, STD_FLOOR) * sigma + mu


class LifeProbe:
    """Counts life-module invocations; inference asserts the one-shot property with it."""

    def __init__(self):
        self.calls = 0
        self.images = 0
        self.layers: list = []

    def record(self, layer: int, batch: int) -> None:
        self.calls += 1
        self.images += batch
        self.layers.append(layer)


def life_tensor(x_tbase: Tensor, weights, mu: float, sigma: float, probe: LifeProbe | None = None,
                layer: int | None = None) -> Tensor:
    """Layer norm -> bilinear score -> renormalisation; returns (B, N) lives."""
    cfg = weights.config
    normed = tm.layer_norm(x_tbase, weights["life.ln.g"], weights["life.ln.b"], cfg.ln_eps)
    s = bilinear_score(normed, weights["life.W"])
    if probe is not None:
        probe.record(cfg.t_base if layer is None else layer, s.shape[0] if s.ndim == 2 else 1)
    return renormalize_to_life(s, mu, sigma)


def predict_lives(x_tbase: Tensor, weights, schedule) -> list:
    """Per-image :class:`LifeVector` list for block outputs at ``t_base``."""
    tau = life_tensor(x_tbase, weights, schedule.mu, schedule.sigma).data
    if tau.ndim == 1:
        tau = tau[None]
    return [LifeVector(row.astype(np.float64), float(weights.config.T)) for row in tau]
