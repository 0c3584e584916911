"""Dense pre-training, two-stage life/backbone fine-tuning and the joint ablation."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as tm
from . import vit
from .conversion import soft_layer_betas
from .data import salient_mask, stack
from .errors import ConfigError, NumericError, TrainingError
from .inference import SlimEngine, rank_patches
from .life import life_tensor
from .schedule import SlimSchedule

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr_life: float = 1e-5
    lr_backbone: float = 1e-3
    lr_pretrain: float = 1e-3
    batch: int = 32
    epochs_pretrain: int = 20
    epochs_stage1: int = 5
    epochs_stage2: int = 5
    seed: int = 0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.05
    converge_tol: float = 1e-4
    converge_patience: int = 2
    pretrain_drop: float = 0.0

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        if min(self.lr_life, self.lr_backbone, self.lr_pretrain) <= 0 or self.batch < 1:
            raise ConfigError("learning rates and batch size must be positive")
        if not 0.0 <= self.pretrain_drop <= 1.0:
            raise ConfigError(f"pretrain_drop must lie in [0, 1], got {self.pretrain_drop}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["adam_betas"] = list(self.adam_betas)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        unknown = set(raw) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**raw)


# Desk-scale settings: ten-thousand synthetic images cannot move the life
# predictor at the ImageNet learning rate within a few epochs. Pre-training
# drops random patches so the backbone, like a large pre-trained one,
# tolerates missing tokens before any life is learned.
DESK = dict(lr_life=1e-2, lr_backbone=1e-4, lr_pretrain=5e-4, batch=32, pretrain_drop=0.7)


class AdamW:
    """Adam with decoupled weight decay; decay applies to matrices only."""

    def __init__(self, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.05):
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state: dict = {}

    def step(self, params: dict, names, lr: float) -> None:
        for name in names:
            p = params[name]
            if p.grad is None:
                continue
            m, v, t = self.state.get(name, (np.zeros_like(p.data), np.zeros_like(p.data), 0))
            t += 1
            g = p.grad
            m = self.b1 * m + (1 - self.b1) * g
            v = self.b2 * v + (1 - self.b2) * g * g
            self.state[name] = (m, v, t)
            if p.ndim >= 2:
                p.data *= 1 - lr * self.weight_decay
            mhat = m / (1 - self.b1**t)
            vhat = v / (1 - self.b2**t)
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)


def loss(logits, label) -> tm.Tensor:
    """Cross-entropy; accepts one logit vector with a scalar label or a batch."""
    if not isinstance(logits, tm.Tensor):
        logits = tm.Tensor(logits)
    if logits.ndim == 1:
        logits = tm.reshape(logits, (1, -1))
    return tm.cross_entropy(logits, np.atleast_1d(label))


def soft_forward(images, weights: vit.ModelWeights, schedule: SlimSchedule) -> tuple:
    """Training forward with smooth weights; no patch is dropped.

    Lives come from a dense pass up to ``t_base``. By default the weights
    are then applied in every layer, which needs a second pass from the
    embeddings; ``beta_after_tbase_only`` instead continues from ``t_base``.
    """
    cfg = weights.config
    x0 = vit.embed(images, weights)
    x = x0
    for t in range(1, cfg.t_base + 1):
        x = vit.block_forward(x, t, weights)
    tau = life_tensor(x, weights, schedule.mu, schedule.sigma)
    if cfg.beta_after_tbase_only:
        layers = range(cfg.t_base + 1, cfg.T + 1)
    else:
        x = x0
        layers = range(1, cfg.T + 1)
    betas = soft_layer_betas(tau, layers, cfg.U, cfg.paper_literal_beta)
    for t in layers:
        x = vit.block_forward(x, t, weights, betas[t])
    return vit.classify(x, weights), tau


def dense_forward(images, weights: vit.ModelWeights) -> tuple:
    return vit.forward_dense(images, weights), None


@dataclass
class History:
    epochs: dict = field(default_factory=dict)
    steps: int = 0
    # epoch means that raised the loss and were rolled back
    rejected: dict = field(default_factory=dict)

    def add(self, stage: str, value: float) -> None:
        self.epochs.setdefault(stage, []).append(value)


def _converged(losses: list, tol: float, patience: int) -> bool:
    if len(losses) <= patience:
        return False
    recent = losses[-patience - 1:]
    return all((a - b) / max(abs(a), 1e-12) < tol for a, b in zip(recent, recent[1:]))


def _run_stage(weights, images, labels, cfg: TrainConfig, groups: dict, forward, stage: str,
               epochs: int, history: History, rng, log=None) -> None:
    """Train the parameter ``groups`` (name list -> lr) for up to ``epochs`` epochs."""
    trainable = [n for names in groups for n in names]
    weights.set_trainable(trainable)
    opt = AdamW(cfg.adam_betas, cfg.adam_eps, cfg.weight_decay)
    lr_field = next(iter(groups.values())) if len(groups) == 1 else {
        "backbone" if not names[0].startswith("life.") else "life": lr for names, lr in groups.items()
    }
    n = len(labels)
    try:
        for epoch in range(epochs):
            snapshot = {name: weights.params[name].data.copy() for name in trainable}
            perm = rng.permutation(n)
            total, seen = 0.0, 0
            for start in range(0, n, cfg.batch):
                idx = perm[start:start + cfg.batch]
                logits = None
                try:
                    with tm.Tape() as tape:
                        logits, _ = forward(images[idx])
                        value = tm.cross_entropy(logits, labels[idx])
                    finite = bool(np.isfinite(value.data))
                except NumericError:
                    finite = False
                if not finite:
                    worst = "n/a" if logits is None else f"{np.max(np.abs(logits.data)):.3g}"
                    raise TrainingError(
                        f"non-finite loss in stage {stage!r} at step {history.steps + 1}, epoch {epoch + 1}; "
                        f"max |logit| = {worst}"
                    )
                tm.backward(tape, value)
                for names, lr in groups.items():
                    opt.step(weights.params, names, lr)
                history.steps += 1
                total += float(value.data) * len(idx)
                seen += len(idx)
                if log is not None:
                    log({"step": history.steps, "stage": stage, "loss": float(value.data), "lr": lr_field})
            mean = total / seen
            logger.info("%s epoch %d loss %.5f", stage, epoch + 1, mean)
            kept = history.epochs.get(stage, [])
            if kept and mean > kept[-1]:
                # an epoch that raises the loss ends the stage and is undone
                for name, value in snapshot.items():
                    weights.params[name].data[...] = value
                history.rejected.setdefault(stage, []).append(mean)
                break
            history.add(stage, mean)
            if _converged(history.epochs[stage], cfg.converge_tol, cfg.converge_patience):
                break
    finally:
        weights.set_trainable([])


def _arrays(data) -> tuple:
    if isinstance(data, tuple):
        return data
    return stack(data)


def random_drop_forward(images, weights: vit.ModelWeights, schedule: SlimSchedule, drop: float, rng) -> tuple:
    """Forward where a ``drop`` fraction of images loses patches by a random ranking.

    Dropped images follow the schedule's survivor counts with binary
    weights, so the backbone sees the same token budgets slimming produces.
    """
    cfg = weights.config
    B, N = images.shape[0], cfg.N
    order = np.argsort(rng.random((B, N)), axis=1)
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(N)[None].repeat(B, 0), axis=1)
    dense = rng.random(B) >= drop
    x = vit.embed(images, weights)
    for t in range(1, cfg.T + 1):
        keep = (ranks < schedule.count(t)) | dense[:, None]
        beta = np.concatenate([np.ones((B, 1)), keep], axis=1).astype(x.data.dtype)
        x = vit.block_forward(x, t, weights, tm.Tensor(beta))
    return vit.classify(x, weights), None


def pretrain_dense(weights: vit.ModelWeights, data, cfg: TrainConfig, log=None, history=None) -> History:
    """Backbone-only training; stands in for pre-trained weights.

    With ``cfg.pretrain_drop > 0`` that fraction of each batch is trained
    with randomly dropped patches.
    """
    images, labels = _arrays(data)
    history = history or History()
    rng = np.random.default_rng(cfg.seed)
    groups = {tuple(weights.names(vit.BACKBONE)): cfg.lr_pretrain}
    if cfg.pretrain_drop > 0:
        schedule = SlimSchedule.from_config(weights.config)
        drop_rng = np.random.default_rng([cfg.seed, 7])

        def forward(x):
            return random_drop_forward(x, weights, schedule, cfg.pretrain_drop, drop_rng)
    else:
        def forward(x):
            return dense_forward(x, weights)
    _run_stage(weights, images, labels, cfg, groups, forward, "pretrain", cfg.epochs_pretrain, history, rng, log)
    return history


def train_two_stage(weights: vit.ModelWeights, data, cfg: TrainConfig, log=None, history=None) -> tuple:
    """Stage 1 fits the life predictor on a frozen backbone; stage 2 the reverse."""
    images, labels = _arrays(data)
    history = history or History()
    schedule = SlimSchedule.from_config(weights.config)
    rng = np.random.default_rng(cfg.seed + 1)

    def forward(x):
        return soft_forward(x, weights, schedule)

    _run_stage(weights, images, labels, cfg, {tuple(weights.names(vit.LIFE)): cfg.lr_life}, forward,
               "stage1", cfg.epochs_stage1, history, rng, log)
    _run_stage(weights, images, labels, cfg, {tuple(weights.names(vit.BACKBONE)): cfg.lr_backbone}, forward,
               "stage2", cfg.epochs_stage2, history, rng, log)
    return weights, history


def train_single_stage(weights: vit.ModelWeights, data, cfg: TrainConfig, log=None, history=None) -> tuple:
    """Ablation: life predictor and backbone updated together for the same epoch budget."""
    images, labels = _arrays(data)
    history = history or History()
    schedule = SlimSchedule.from_config(weights.config)
    rng = np.random.default_rng(cfg.seed + 1)
    groups = {
        tuple(weights.names(vit.LIFE)): cfg.lr_life,
        tuple(weights.names(vit.BACKBONE)): cfg.lr_backbone,
    }
    _run_stage(weights, images, labels, cfg, groups, lambda x: soft_forward(x, weights, schedule), "single",
               cfg.epochs_stage1 + cfg.epochs_stage2, history, rng, log)
    return weights, history


def evaluate(weights: vit.ModelWeights, data, config: vit.ViTConfig | None = None, batch: int = 256) -> float:
    """Top-1 accuracy of hard slimming inference (dense when ``config.rho == 1``)."""
    images, labels = _arrays(data)
    engine = SlimEngine(weights, config)
    preds = np.concatenate([engine.infer(images[i:i + batch]).argmax(axis=1) for i in range(0, len(labels), batch)])
    return float((preds == labels).mean())


def salient_life_stats(weights: vit.ModelWeights, samples, batch: int = 256) -> dict:
    """Mean life and mean rank (0 = longest-lived) of salient vs other patches."""
    engine = SlimEngine(weights)
    images, _ = stack(samples)
    N = weights.config.N
    mask = salient_mask(samples, N)
    taus = []
    for i in range(0, len(samples), batch):
        _, tau = engine.infer_with_lives(images[i:i + batch])
        if tau is None:
            sched = engine.schedule
            x = vit.embed(images[i:i + batch].astype(np.float32), engine.weights)
            for t in range(1, weights.config.t_base + 1):
                x = vit.block_forward(x, t, engine.weights)
            tau = life_tensor(x, engine.weights, sched.mu, max(sched.sigma, 1.0)).data
        taus.append(tau)
    tau = np.concatenate(taus).astype(np.float64)
    ranks = np.empty_like(tau)
    np.put_along_axis(ranks, rank_patches(tau), np.arange(N, dtype=np.float64)[None].repeat(len(tau), 0), axis=1)
    return {
        "tau_salient": float(tau[mask].mean()),
        "tau_other": float(tau[~mask].mean()),
        "rank_salient": float(ranks[mask].mean()),
        "rank_other": float(ranks[~mask].mean()),
    }
