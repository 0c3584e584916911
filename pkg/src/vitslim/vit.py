"""Toy-to-DeiT-sized ViT backbone built on :mod:`vitslim.tensor`.

Tokens are laid out ``[CLS, patch_0, ..., patch_{N-1}]`` and every forward
function works on a batch of shape (B, N+1, d).
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import tensor as tm
from .errors import ConfigError, DimensionError
from .tensor import Tensor


@dataclass
class ViTConfig:
    T: int = 6
    d: int = 32
    H: int = 4
    p: int = 4
    image_side: int = 16
    channels: int = 1
    num_classes: int = 4
    t_base: int = 2
    U: float = 1.5
    t_slim: tuple = (2, 3, 4)
    rho: float = 0.7
    mlp_ratio: int = 4
    ln_eps: float = 1e-5
    paper_literal_beta: bool = False
    beta_after_tbase_only: bool = False

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type == "int" and (isinstance(value, bool) or not isinstance(value, (int, np.integer))):
                raise ConfigError(f"{f.name} must be an integer, got {value!r}")
            if f.type == "float" and (isinstance(value, bool) or not isinstance(value, (int, float, np.number))):
                raise ConfigError(f"{f.name} must be a number, got {value!r}")
            if f.type == "bool" and not isinstance(value, (bool, np.bool_)):
                raise ConfigError(f"{f.name} must be true or false, got {value!r}")
        try:
            self.t_slim = tuple(int(t) for t in self.t_slim)
        except (TypeError, ValueError):
            raise ConfigError(f"t_slim must be a list of layer indices, got {self.t_slim!r}") from None
        self.validate()

    def validate(self) -> None:
        if self.T < 1 or self.d < 1 or self.H < 1:
            raise ConfigError("T, d and H must be positive")
        if self.d % self.H:
            raise ConfigError(f"embed dim {self.d} is not divisible by {self.H} heads")
        if self.image_side % self.p:
            raise ConfigError(f"image side {self.image_side} is not divisible by patch side {self.p}")
        if not 0 < self.rho <= 1:
            raise ConfigError(f"keep rate must lie in (0, 1], got {self.rho}")
        if self.U <= 0:
            raise ConfigError(f"temperature must be positive, got {self.U}")
        if not 1 <= self.t_base <= self.T:
            raise ConfigError(f"t_base={self.t_base} outside [1, {self.T}]")
        ts = self.t_slim
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigError(f"t_slim must be strictly ascending, got {list(ts)}")
        # lives are predicted from the output of layer t_base, so the first
        # slimming layer may coincide with it (the count shrinks from t_slim+1)
        if ts and (ts[0] < self.t_base or ts[-1] > self.T):
            raise ConfigError(f"t_slim {list(ts)} must lie within [t_base={self.t_base}, T={self.T}]")
        if self.rho < 1 and not ts:
            raise ConfigError("a keep rate below 1 needs at least one slimming layer")

    @property
    def grid(self) -> int:
        return self.image_side // self.p

    @property
    def N(self) -> int:
        return self.grid * self.grid

    @property
    def head_dim(self) -> int:
        return self.d // self.H

    @property
    def patch_dim(self) -> int:
        return self.p * self.p * self.channels

    def to_dict(self) -> dict:
        out = asdict(self)
        out["t_slim"] = list(self.t_slim)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ViTConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**raw)

    def replace(self, **changes) -> "ViTConfig":
        return ViTConfig.from_dict({**self.to_dict(), **changes})


PRESETS = {
    # desk-scale model
    "toy": dict(),
    # toy model as trained on the synthetic set: slimming starts right after
    # layer 1, before attention has spread the motif over every token
    "desk": dict(t_base=1, t_slim=(1, 2, 3), beta_after_tbase_only=True),
    # smallest config for end-to-end finite-difference checks
    "micro": dict(T=3, d=8, H=2, p=2, image_side=4, channels=1, num_classes=3,
                  t_base=1, t_slim=(2,), rho=0.5),
    "deit-s": dict(T=12, d=384, H=6, p=16, image_side=224, channels=3, num_classes=1000,
                   t_base=4, t_slim=(4, 7, 10), rho=0.7),
    "deit-b": dict(T=12, d=768, H=12, p=16, image_side=224, channels=3, num_classes=1000,
                   t_base=4, t_slim=(4, 7, 10), rho=0.7),
}
PRESETS["vit-s"] = PRESETS["deit-s"]
PRESETS["vit-b"] = PRESETS["deit-b"]


def preset(name: str, **overrides) -> ViTConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return ViTConfig(**{**base, **overrides})


BACKBONE = "backbone"
LIFE = "life"


@dataclass
class ModelWeights:
    config: ViTConfig
    params: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def names(self, group: str | None = None) -> list:
        if group is None:
            return list(self.params)
        is_life = group == LIFE
        return [n for n in self.params if n.startswith("life.") == is_life]

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights(self.config, {k: Tensor(v.data.astype(dtype)) for k, v in self.params.items()})

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.config, {k: Tensor(v.data.copy()) for k, v in self.params.items()})

    def set_trainable(self, names) -> None:
        names = set(names)
        for k, v in self.params.items():
            v.requires_grad = k in names
            v.grad = None

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype


def init_weights(config: ViTConfig, seed: int = 0, dtype=np.float64) -> ModelWeights:
    rng = np.random.default_rng(seed)
    d, hidden = config.d, config.d * config.mlp_ratio

    def normal(*shape, std=0.02):
        return np.clip(rng.normal(0.0, std, shape), -2 * std, 2 * std)

    p = {
        "patch_embed.w": normal(config.patch_dim, d, std=1.0 / math.sqrt(config.patch_dim)),
        "patch_embed.b": np.zeros(d),
        "cls_token": normal(d),
        "pos_embed": normal(config.N + 1, d),
    }
    for layer in range(1, config.T + 1):
        pre = f"blocks.{layer}."
        p[pre + "ln1.g"] = np.ones(d)
        p[pre + "ln1.b"] = np.zeros(d)
        for name in ("q", "k", "v", "o"):
            p[pre + f"attn.w{name}"] = normal(d, d)
            p[pre + f"attn.b{name}"] = np.zeros(d)
        p[pre + "ln2.g"] = np.ones(d)
        p[pre + "ln2.b"] = np.zeros(d)
        p[pre + "mlp1.w"] = normal(d, hidden)
        p[pre + "mlp1.b"] = np.zeros(hidden)
        p[pre + "mlp2.w"] = normal(hidden, d)
        p[pre + "mlp2.b"] = np.zeros(d)
    p["norm.g"] = np.ones(d)
    p["norm.b"] = np.zeros(d)
    p["head.w"] = normal(d, config.num_classes)
    p["head.b"] = np.zeros(config.num_classes)
    p["life.ln.g"] = np.ones(d)
    p["life.ln.b"] = np.zeros(d)
    # start as plain CLS/patch similarity
    p["life.W"] = np.eye(d) + rng.normal(0.0, 0.02, (d, d))
    return ModelWeights(config, {k: Tensor(np.asarray(v, dtype=dtype)) for k, v in p.items()})


# -- patches ----------------------------------------------------------------


def patchify(image: np.ndarray, p: int) -> np.ndarray:
    """(S, S, c) or (B, S, S, c) image -> (..., N, p*p*c), row-major patch order."""
    image = np.asarray(image)
    single = image.ndim == 3
    if single:
        image = image[None]
    if image.ndim != 4:
        raise DimensionError(f"expected (B, S, S, c) images, got shape {image.shape}")
    B, S, S2, c = image.shape
    if S % p or S2 % p:
        raise DimensionError(f"image side {S}x{S2} is not divisible by patch side {p}")
    g1, g2 = S // p, S2 // p
    out = image.reshape(B, g1, p, g2, p, c).transpose(0, 1, 3, 2, 4, 5).reshape(B, g1 * g2, p * p * c)
    return out[0] if single else out


def unpatchify(patches: np.ndarray, p: int, channels: int) -> np.ndarray:
    patches = np.asarray(patches)
    single = patches.ndim == 2
    if single:
        patches = patches[None]
    B, N, _ = patches.shape
    g = math.isqrt(N)
    if g * g != N:
        raise DimensionError(f"{N} patches do not form a square grid")
    out = patches.reshape(B, g, g, p, p, channels).transpose(0, 1, 3, 2, 4, 5).reshape(B, g * p, g * p, channels)
    return out[0] if single else out


# -- forward ----------------------------------------------------------------


def embed(images: np.ndarray, weights: ModelWeights) -> Tensor:
    cfg = weights.config
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    if images.shape[1:] != (cfg.image_side, cfg.image_side, cfg.channels):
        raise DimensionError(
            f"image shape {images.shape[1:]} does not match config "
            f"{(cfg.image_side, cfg.image_side, cfg.channels)}"
        )
    B = images.shape[0]
    patches = Tensor(patchify(images, cfg.p).astype(weights.dtype, copy=False))
    x = patches @ weights["patch_embed.w"] + weights["patch_embed.b"]
    cls = tm.broadcast_to(tm.reshape(weights["cls_token"], (1, 1, cfg.d)), (B, 1, cfg.d))
    return tm.concat([cls, x], axis=1) + weights["pos_embed"]


def mhsa_forward(x: Tensor, layer: int, weights: ModelWeights, beta: Tensor | None = None) -> Tensor:
    """Multi-head attention over (already normalised) tokens ``x``.

    With ``beta`` (shape (B, M) or (M,)) key ``j`` is weighted by
    ``beta_j`` and each query row is renormalised; all-ones ``beta`` gives
    plain attention.
    """
    cfg = weights.config
    single = x.ndim == 2
    if single:
        x = tm.reshape(x, (1,) + x.shape)
    B, M, d = x.shape
    H, dh = cfg.H, cfg.head_dim
    pre = f"blocks.{layer}.attn."

    def heads(t):
        return tm.transpose(tm.reshape(t, (B, M, H, dh)), (0, 2, 1, 3))

    q = heads(x @ weights[pre + "wq"] + weights[pre + "bq"])
    k = heads(x @ weights[pre + "wk"] + weights[pre + "bk"])
    v = heads(x @ weights[pre + "wv"] + weights[pre + "bv"])
    h = (q @ tm.swap_last(k)) * (1.0 / math.sqrt(dh))
    if beta is None:
        a = tm.softmax_rows(h)
    else:
        if beta.shape[-1] != M:
            raise DimensionError(f"beta has {beta.shape[-1]} entries for {M} tokens")
        a = tm.weighted_softmax(h, tm.reshape(beta, (-1, 1, 1, M)))
    o = tm.reshape(tm.transpose(a @ v, (0, 2, 1, 3)), (B, M, d))
    out = o @ weights[pre + "wo"] + weights[pre + "bo"]
    return tm.reshape(out, (M, d)) if single else out


def mlp_forward(x: Tensor, layer: int, weights: ModelWeights) -> Tensor:
    pre = f"blocks.{layer}."
    hidden = tm.gelu(x @ weights[pre + "mlp1.w"] + weights[pre + "mlp1.b"])
    return hidden @ weights[pre + "mlp2.w"] + weights[pre + "mlp2.b"]


def block_forward(x: Tensor, layer: int, weights: ModelWeights, beta: Tensor | None = None) -> Tensor:
    pre = f"blocks.{layer}."
    eps = weights.config.ln_eps
    x = x + mhsa_forward(tm.layer_norm(x, weights[pre + "ln1.g"], weights[pre + "ln1.b"], eps), layer, weights, beta)
    return x + mlp_forward(tm.layer_norm(x, weights[pre + "ln2.g"], weights[pre + "ln2.b"], eps), layer, weights)


def classify(x_final: Tensor, weights: ModelWeights) -> Tensor:
    """Logits from the normalised final [CLS] feature; (B, M, d) -> (B, C)."""
    single = x_final.ndim == 2
    if single:
        x_final = tm.reshape(x_final, (1,) + x_final.shape)
    cls = x_final[:, 0, :]
    normed = tm.layer_norm(cls, weights["norm.g"], weights["norm.b"], weights.config.ln_eps)
    logits = normed @ weights["head.w"] + weights["head.b"]
    return tm.reshape(logits, (-1,)) if single else logits


def forward_dense(images: np.ndarray, weights: ModelWeights) -> Tensor:
    x = embed(images, weights)
    for layer in range(1, weights.config.T + 1):
        x = block_forward(x, layer, weights)
    return classify(x, weights)


def forward_weighted(images: np.ndarray, weights: ModelWeights, betas) -> Tensor:
    """Full-sequence forward with a per-layer weight of shape (B, N+1).

    ``betas`` is either a mapping from 1-based layer to weight (missing
    layers run unweighted) or a sequence indexed by ``layer - 1``.
    """
    x = embed(images, weights)
    for layer in range(1, weights.config.T + 1):
        beta = betas.get(layer) if isinstance(betas, Mapping) else betas[layer - 1]
        if beta is not None and not isinstance(beta, Tensor):
            beta = Tensor(np.asarray(beta, dtype=weights.dtype))
        x = block_forward(x, layer, weights, beta)
    return classify(x, weights)
