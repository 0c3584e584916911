"""Per-layer patch counts and the life moments they imply."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, ContractError


def round_half_up(x: float) -> int:
    # the epsilon absorbs float noise such as 0.7 * 137 = 95.89999...
    return int(math.floor(x + 0.5 + 1e-9))


def build_counts(N: int, T: int, rho: float, t_slim) -> list:
    """Patch counts (CLS excluded) used by layers 1..T.

    The count drops to ``round_half_up(rho * previous)`` right after each
    slimming layer and holds until the next one.
    """
    t_slim = [int(t) for t in t_slim]
    if not 0 < rho <= 1:
        raise ConfigError(f"keep rate must lie in (0, 1], got {rho}")
    if rho < 1 and not t_slim:
        raise ConfigError("a keep rate below 1 needs at least one slimming layer")
    if any(b <= a for a, b in zip(t_slim, t_slim[1:])):
        raise ConfigError(f"slimming layers must be strictly ascending, got {t_slim}")
    if t_slim and (t_slim[0] < 1 or t_slim[-1] > T):
        raise ConfigError(f"slimming layers {t_slim} fall outside [1, {T}]")
    counts, current, pending = [], N, set(t_slim) if rho < 1 else set()
    for t in range(1, T + 1):
        counts.append(current)
        if t in pending:
            current = max(1, round_half_up(rho * current))
    return counts


def validate_counts(n, N: int) -> None:
    n = list(n)
    if not n or n[0] != N:
        raise ContractError(f"first layer must use all {N} patches, got {n[:1]}")
    if any(not 1 <= c <= N for c in n):
        raise ContractError(f"counts must lie in [1, {N}], got {n}")
    if any(b > a for a, b in zip(n, n[1:])):
        raise ContractError(f"counts must be non-increasing, got {n}")


def life_histogram(n, T: int) -> dict:
    """Life value -> number of patches: ``n_t - n_{t+1}`` patches die after layer t."""
    n = list(n)
    hist = {}
    for t in range(1, T):
        if n[t - 1] != n[t]:
            hist[t] = n[t - 1] - n[t]
    if n[T - 1]:
        hist[T] = n[T - 1]
    return hist


def target_moments(n, N: int, T: int) -> tuple:
    """Mean and population std of the lives implied by the counts.

    The deviations are squared; without the square the sum is identically zero.
    """
    n = list(n)
    validate_counts(n, N)
    if len(n) != T:
        raise ContractError(f"expected {T} counts, got {len(n)}")
    mu = (sum(t * (n[t - 1] - n[t]) for t in range(1, T)) + T * n[T - 1]) / N
    var = (sum((t - mu) ** 2 * (n[t - 1] - n[t]) for t in range(1, T)) + (T - mu) ** 2 * n[T - 1]) / N
    return mu, math.sqrt(max(var, 0.0))


@dataclass(frozen=True)
class SlimSchedule:
    n: tuple
    t_slim: tuple
    rho: float
    mu: float
    sigma: float
    N: int
    T: int

    @classmethod
    def build(cls, N: int, T: int, rho: float, t_slim) -> "SlimSchedule":
        n = build_counts(N, T, rho, t_slim)
        mu, sigma = target_moments(n, N, T)
        return cls(tuple(n), tuple(int(t) for t in t_slim), float(rho), mu, sigma, N, T)

    @classmethod
    def from_config(cls, config) -> "SlimSchedule":
        return cls.build(config.N, config.T, config.rho, config.t_slim)

    def count(self, t: int) -> int:
        """Patches used by layer ``t`` (1-based)."""
        return self.n[t - 1]

    @property
    def slims(self) -> bool:
        return self.n[-1] < self.N

    def to_dict(self) -> dict:
        return {
            "n": list(self.n),
            "t_slim": list(self.t_slim),
            "rho": self.rho,
            "mu": self.mu,
            "sigma": self.sigma,
            "N": self.N,
            "T": self.T,
        }
