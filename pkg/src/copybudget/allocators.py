"""Baseline allocation strategies and the outer x inner pairing interface.

Outer strategies map the current episode state to a round budget; inner
strategies map the round context to a fraction vector over the full holder
roster. All inner strategies return exact rationals that sum to one. Any
outer strategy composes with any inner strategy, which is how the whole
comparison matrix (including the score-proportional ablations) is built.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import rl
from .config import ExperimentConfig
from .envsim import Episode


class StrategyError(ValueError):
    pass


OUTER_KINDS = ("rl", "greedy", "linear", "random")
INNER_KINDS = ("rl", "linear", "random", "contribution", "copyright")

_OUTER_TOKENS = {"RL": "rl", "G": "greedy", "L": "linear", "R": "random"}
_INNER_TOKENS = {
    "RL": "rl",
    "L": "linear",
    "R": "random",
    "C": "contribution",
    "CL": "copyright",
}
_OUTER_NAMES = {v: k for k, v in _OUTER_TOKENS.items()}
_INNER_NAMES = {v: k for k, v in _INNER_TOKENS.items()}

# The full comparison matrix: the hierarchical pair, the eight baselines,
# and the two score-proportional ablations.
ALL_PAIR_NAMES = (
    "RL+RL",
    "G+L",
    "L+L",
    "R+R",
    "RL+R",
    "RL+L",
    "R+RL",
    "L+RL",
    "G+RL",
    "RL+C",
    "RL+CL",
)


@dataclass(frozen=True)
class StrategyPair:
    outer: str
    inner: str

    def __post_init__(self) -> None:
        if self.outer not in OUTER_KINDS:
            raise StrategyError(f"unknown outer strategy {self.outer!r}")
        if self.inner not in INNER_KINDS:
            raise StrategyError(f"unknown inner strategy {self.inner!r}")

    @property
    def name(self) -> str:
        return f"{_OUTER_NAMES[self.outer]}+{_INNER_NAMES[self.inner]}"

    @classmethod
    def parse(cls, text: str) -> "StrategyPair":
        """Accept either short names like "RL+CL" or long ones like "rl+copyright"."""
        parts = text.strip().split("+")
        if len(parts) != 2:
            raise StrategyError(f"strategy pair {text!r} must look like OUTER+INNER")
        return cls(outer=parse_outer(parts[0]), inner=parse_inner(parts[1]))


def parse_outer(token: str) -> str:
    token = token.strip()
    return _OUTER_TOKENS.get(token.upper(), token.lower())


def parse_inner(token: str) -> str:
    token = token.strip()
    return _INNER_TOKENS.get(token.upper(), token.lower())


# ---------------------------------------------------------------------------
# Outer strategies


def linear_outer(total_budget: float, rounds: int, t: int, budget_left: float) -> float:
    """Even split of the total budget across rounds, clipped to what is left."""
    del t
    return min(total_budget / rounds, budget_left)


def random_outer(
    budget_left: float,
    t_left: int,
    levels: np.ndarray,
    rng: np.random.Generator,
) -> float:
    """Uniform draw on [0, budget_left] snapped to the outer grid; the final
    round spends everything that is left."""
    if t_left <= 1:
        return budget_left
    draw = rng.uniform(0.0, budget_left)
    nearest = levels[int(np.argmin(np.abs(levels - draw)))]
    return float(min(nearest, budget_left))


def greedy_outer(budget_left: float, available_prices: Sequence[float]) -> float:
    """Myopic full recruitment: try to pay every available asking price now."""
    return float(min(budget_left, sum(available_prices)))


# ---------------------------------------------------------------------------
# Inner strategies


def linear_inner(available: np.ndarray) -> tuple[Fraction, ...]:
    """Uniform fractions over the available holders."""
    idx = np.flatnonzero(available)
    if idx.size == 0:
        raise StrategyError("no available holders to allocate to")
    share = Fraction(1, int(idx.size))
    out = [Fraction(0)] * len(available)
    for k in idx:
        out[int(k)] = share
    return tuple(out)


def random_inner(grid: rl.InnerGrid, rng: np.random.Generator) -> tuple[Fraction, ...]:
    """Uniform random point on the inner action grid."""
    return grid.fractions[int(rng.integers(len(grid)))]


def proportional_inner(
    scores: np.ndarray, available: np.ndarray
) -> tuple[Fraction, ...]:
    """Fractions proportional to nonnegative scores over available holders;
    an all-zero score vector falls back to the uniform split."""
    scores = np.asarray(scores, dtype=float)
    if np.any(scores < 0):
        raise StrategyError("scores must be nonnegative")
    masked = np.where(available, scores, 0.0)
    total = masked.sum()
    if total == 0.0:
        return linear_inner(available)
    exact = [Fraction(float(v)) for v in masked]
    denom = sum(exact)
    return tuple(f / denom for f in exact)


def contribution_inner(
    beta_k: np.ndarray, available: np.ndarray
) -> tuple[Fraction, ...]:
    return proportional_inner(beta_k, available)


def copyright_inner(chat_k: np.ndarray, available: np.ndarray) -> tuple[Fraction, ...]:
    return proportional_inner(chat_k, available)


# ---------------------------------------------------------------------------
# Uniform call interfaces used by the episode runner


@dataclass
class OuterAllocator:
    """Dispatches a configured outer strategy against the live episode."""

    kind: str
    cfg: ExperimentConfig
    levels: np.ndarray
    rng: np.random.Generator | None = None
    policy: rl.OuterPolicy | None = None

    def budget(self, episode: Episode) -> float:
        if self.kind == "linear":
            return linear_outer(
                self.cfg.total_budget, self.cfg.rounds, episode.t, episode.budget_left
            )
        if self.kind == "random":
            if self.rng is None:
                raise StrategyError("random outer strategy needs a stream")
            return random_outer(episode.budget_left, episode.t_left, self.levels, self.rng)
        if self.kind == "greedy":
            prices = [
                h.asking_price
                for h, avail in zip(episode.world.holders, episode.available_mask())
                if avail
            ]
            return greedy_outer(episode.budget_left, prices)
        if self.kind == "rl":
            if self.policy is None:
                raise StrategyError("rl outer strategy needs a trained policy")
            return self.policy.budget(episode.state_vector(), episode.budget_left)
        raise StrategyError(f"unknown outer strategy {self.kind!r}")


@dataclass
class InnerAllocator:
    """Dispatches a configured inner strategy for one round's context."""

    kind: str
    cfg: ExperimentConfig
    grid: rl.InnerGrid

    def fractions(self, ctx: rl.InnerContext) -> tuple[Fraction, ...]:
        if self.kind == "linear":
            return linear_inner(ctx.available)
        if self.kind == "random":
            return random_inner(self.grid, ctx.rng)
        if self.kind == "contribution":
            return contribution_inner(ctx.beta_k, ctx.available)
        if self.kind == "copyright":
            return copyright_inner(ctx.chat_k, ctx.available)
        if self.kind == "rl":
            return rl.train_inner(ctx, self.cfg, self.grid)
        raise StrategyError(f"unknown inner strategy {self.kind!r}")
