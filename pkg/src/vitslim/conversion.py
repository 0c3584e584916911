"""Turn patch lives into per-layer retention weights.

The hard step keeps patch ``i`` in layer ``t`` iff ``t <= tau_i``. Its smooth
stand-in is ``1 / (1 + exp(U (t - tau_i)))``, which falls from 1 to 0 as the
layer index passes the life. The exponent sign printed in the source
(``U (tau_i - t)``) produces the reverse curve; ``paper_literal=True``
selects it for comparison only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tm
from .tensor import Tensor

HARD = "hard"
SOFT = "soft"


def step_weight(tau, t):
    """1 where ``t <= tau`` else 0 (works elementwise on arrays)."""
    out = np.where(np.asarray(t) <= np.asarray(tau), 1, 0)
    return int(out) if out.ndim == 0 else out


def sigmoid_weight(tau, t, U: float, paper_literal: bool = False):
    z = U * (np.asarray(t, dtype=np.float64) - np.asarray(tau, dtype=np.float64))
    if paper_literal:
        z = -z
    out = 0.5 * (1.0 - np.tanh(0.5 * z))
    return float(out) if out.ndim == 0 else out


def sigmoid_weight_tensor(tau: Tensor, t: float, U: float, paper_literal: bool = False) -> Tensor:
    z = (tau - t) * U
    return tm.sigmoid(tm.neg(z) if paper_literal else z)


@dataclass
class WeightMatrix:
    """(N+1) x T weights; row 0 is CLS, column ``t-1`` is layer ``t``."""

    beta: np.ndarray
    mode: str
    U: float

    def layer(self, t: int) -> np.ndarray:
        return self.beta[:, t - 1]


def build_weight_matrix(lives, T: int, U: float = 1.5, mode: str = HARD,
                        paper_literal: bool = False) -> WeightMatrix:
    tau = np.asarray(getattr(lives, "tau", lives), dtype=np.float64)
    t = np.arange(1, T + 1, dtype=np.float64)
    if mode == HARD:
        patches = step_weight(tau[:, None], t[None, :]).astype(np.float64)
    elif mode == SOFT:
        patches = sigmoid_weight(tau[:, None], t[None, :], U, paper_literal)
    else:
        raise ValueError(f"mode must be {HARD!r} or {SOFT!r}, got {mode!r}")
    beta = np.vstack([np.ones((1, T)), patches])
    return WeightMatrix(beta, mode, U)


def soft_layer_betas(tau: Tensor, layers, U: float, paper_literal: bool = False) -> dict:
    """Layer -> (B, N+1) differentiable weights with the CLS entry fixed at 1."""
    ones = Tensor(np.ones((tau.shape[0], 1), dtype=tau.dtype))
    return {
        t: tm.concat([ones, sigmoid_weight_tensor(tau, float(t), U, paper_literal)], axis=1)
        for t in layers
    }
