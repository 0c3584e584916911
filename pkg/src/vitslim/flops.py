"""Analytic operation counts for a (slimmed) ViT.

Counts are multiply-accumulates, the unit behind the usual "4.6 GFLOPs"
figure quoted for DeiT-S; softmax, norms and activations are excluded. With
``m`` tokens in a layer:

* attention: ``4 m d^2`` (q, k, v and output projections) + ``2 m^2 d``
* MLP: ``2 r m d^2`` with expansion ratio ``r``
* one-shot life module at ``t_base``: ``2 m d^2 + m d``
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .schedule import SlimSchedule, validate_counts


@dataclass
class LayerFlops:
    layer: int
    tokens: int
    attention_flops: int
    mlp_flops: int
    slim_flops: int = 0

    @property
    def total(self) -> int:
        return self.attention_flops + self.mlp_flops + self.slim_flops


@dataclass
class FlopsReport:
    per_layer: list
    embed_flops: int
    head_flops: int
    total: int
    config_echo: dict = field(default_factory=dict)

    @property
    def gflops(self) -> float:
        return self.total / 1e9

    def to_dict(self) -> dict:
        out = asdict(self)
        out["gflops"] = self.gflops
        return out


def attention_flops(m: int, d: int) -> int:
    return 4 * m * d * d + 2 * m * m * d


def mlp_flops(m: int, d: int, ratio: int = 4) -> int:
    return 2 * ratio * m * d * d


def life_module_flops(m: int, d: int) -> int:
    return 2 * m * d * d + m * d


def count_flops(config, n=None) -> FlopsReport:
    """Per-layer counts for patch counts ``n`` (defaults to the config's schedule)."""
    if n is None:
        n = SlimSchedule.from_config(config).n
    n = list(n)
    validate_counts(n, config.N)
    d = config.d
    slimming = n[-1] < config.N
    rows = []
    for t, count in enumerate(n, start=1):
        m = count + 1
        slim = life_module_flops(m, d) if slimming and t == config.t_base else 0
        rows.append(LayerFlops(t, m, attention_flops(m, d), mlp_flops(m, d, config.mlp_ratio), slim))
    embed = config.N * config.patch_dim * d
    head = d * config.num_classes
    total = embed + head + sum(r.total for r in rows)
    echo = {"T": config.T, "d": d, "N": config.N, "rho": config.rho, "t_slim": list(config.t_slim),
            "t_base": config.t_base, "n": n}
    return FlopsReport(rows, embed, head, total, echo)


def reduction_percent(dense: FlopsReport, slim: FlopsReport) -> float:
    """Saving expressed relative to the slimmed cost, ``(dense / slim - 1) * 100``.

    This is the convention behind the "3.2 (-44%)" entry next to a 4.6 G
    dense model.
    """
    return (dense.total / slim.total - 1.0) * 100.0


def compare_slim_overhead(config) -> dict:
    """Slimming-prediction cost of a per-layer scorer versus the one-shot life module.

    The per-layer scorer applies the same bilinear scoring op at each of the
    T' slimming layers; each call is charged the cost at ``t_base`` so the
    ratio isolates the call count. A token-aware figure, where later calls
    see fewer tokens, is reported alongside.
    """
    sched = SlimSchedule.from_config(config)
    d = config.d
    per_call = life_module_flops(sched.count(config.t_base) + 1, d)
    t_prime = len(config.t_slim) if sched.slims else 0
    ours = per_call if t_prime else 0
    baseline = t_prime * per_call
    token_aware = sum(life_module_flops(sched.count(t) + 1, d) for t in config.t_slim) if t_prime else 0
    return {
        "t_prime": t_prime,
        "one_shot_flops": ours,
        "per_layer_flops": baseline,
        "ratio": baseline / ours if ours else None,
        "per_layer_flops_token_aware": token_aware,
        "ratio_token_aware": token_aware / ours if ours else None,
    }
