"""Central finite-difference checks of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tm
from . import vit
from .schedule import SlimSchedule
from .train import soft_forward


@dataclass
class GradCheck:
    name: str
    entries: int
    rel_err: float
    max_abs_err: float

    def ok(self, tol: float) -> bool:
        return self.rel_err <= tol


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)``.

    Returns 0 when both norms are below ``floor``: such gradients are zero up
    to rounding (attention key biases, for one, cancel in the softmax).
    """
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_grad(f, array: np.ndarray, index, eps: float) -> float:
    """Central difference of scalar ``f()`` in ``array[index]``, restored afterwards."""
    old = array[index]
    array[index] = old + eps
    up = f()
    array[index] = old - eps
    down = f()
    array[index] = old
    return (up - down) / (2 * eps)


def check_tensors(loss_fn, params: dict, names=None, eps: float = 1e-5, max_entries: int | None = None,
                  seed: int = 0) -> list:
    """Compare tape gradients with central differences for each named tensor.

    ``loss_fn()`` must return a scalar Tensor built from ``params``. With
    ``max_entries`` only a random subset of each tensor's entries is probed.
    """
    names = list(params) if names is None else list(names)
    for name in names:
        params[name].requires_grad = True
    with tm.Tape() as tape:
        loss = loss_fn()
    tm.backward(tape, loss)
    analytic = {n: params[n].grad.copy() for n in names}
    for n in names:
        params[n].requires_grad = False
        params[n].grad = None

    def value() -> float:
        return float(loss_fn().data)

    rng = np.random.default_rng(seed)
    out = []
    for name in names:
        data = params[name].data
        flat = np.arange(data.size)
        if max_entries is not None and data.size > max_entries:
            flat = np.sort(rng.choice(data.size, size=max_entries, replace=False))
        idx = [np.unravel_index(i, data.shape) for i in flat]
        num = np.array([numeric_grad(value, data, i, eps) for i in idx])
        ana = np.array([analytic[name][i] for i in idx])
        out.append(GradCheck(name, len(idx), rel_error(ana, num), float(np.max(np.abs(ana - num)))))
    return out


def end_to_end(config: vit.ViTConfig, seed: int = 0, batch: int = 3, eps: float = 1e-5,
               max_entries: int | None = 12) -> list:
    """Classification loss through soft slimming, checked for every parameter tensor (f64)."""
    weights = vit.init_weights(config, seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    # perturb the life matrix off the identity so its gradient is generic
    weights.params["life.W"].data += rng.normal(0, 0.3, weights.params["life.W"].data.shape)
    side = config.image_side
    images = rng.random((batch, side, side, config.channels))
    labels = rng.integers(config.num_classes, size=batch)
    schedule = SlimSchedule.from_config(config)

    def loss_fn():
        logits, _ = soft_forward(images, weights, schedule)
        return tm.cross_entropy(logits, labels)

    life = weights.names(vit.LIFE)
    results = check_tensors(loss_fn, weights.params, life, eps, None, seed)
    results += check_tensors(loss_fn, weights.params, weights.names(vit.BACKBONE), eps, max_entries, seed)
    return results
