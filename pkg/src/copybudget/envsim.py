"""The simulated multi-round training world.

Holders own tier-dependent Gaussian feature clouds; paying a holder at or
above its asking price makes it join the round; the generative model is a
Gaussian fitted to everything recruited so far; each executed round scores
the newly recruited samples for contribution and copyright loss and updates
the running ledger. Final quality is the Fréchet distance between a seeded
generated batch and a fixed held-out reference set, mapped through Q.

Quality tiers: high draws from the reference distribution itself; medium is
mean-shifted by one noise unit; low is shifted by three and twice as noisy.
A model that never recruited anything generates from a far-off prior.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import attribution, copyright, quality
from .config import ExperimentConfig, QualityTier
from .samples import Sample

_FRACTION_TOL = 1e-9

_TIER_SHIFT = {QualityTier.HIGH: 0.0, QualityTier.MEDIUM: 1.0, QualityTier.LOW: 3.0}
_TIER_SCALE = {QualityTier.HIGH: 1.0, QualityTier.MEDIUM: 1.0, QualityTier.LOW: 2.0}


class AllocationError(ValueError):
    pass


def outer_reward(t_l: int, q: quality.QualityScore | None = None) -> float:
    """0.01 while rounds remain; the model quality at the last round."""
    if t_l > 1:
        return 0.01
    if q is None:
        raise ValueError("final-round reward needs the quality score")
    return q.q


def inner_reward(
    p: Sequence[float | Fraction],
    beta_k: np.ndarray,
    chat_k: np.ndarray,
    lam: float,
    delta: float,
) -> float:
    """lam * sum(p * beta) - delta * sum(p * chat)."""
    p_arr = np.array([float(v) for v in p])
    beta_k = np.asarray(beta_k, dtype=float)
    chat_k = np.asarray(chat_k, dtype=float)
    if p_arr.shape != beta_k.shape or p_arr.shape != chat_k.shape:
        raise ValueError("fraction and score vectors must be aligned")
    return lam * float(p_arr @ beta_k) - delta * float(p_arr @ chat_k)


@dataclass(frozen=True)
class DataHolder:
    id: str
    quality_tier: QualityTier
    asking_price: float
    join_round: int
    samples: tuple[Sample, ...]

    @property
    def sample_count(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class World:
    """Everything drawn once per run seed and shared by all episodes."""

    cfg: ExperimentConfig
    holders: tuple[DataHolder, ...]
    reference: np.ndarray
    embedder: copyright.SemanticEmbedder
    stack: copyright.FeatureStack

    @property
    def holder_ids(self) -> tuple[str, ...]:
        return tuple(h.id for h in self.holders)

    @property
    def total_samples(self) -> int:
        return sum(h.sample_count for h in self.holders)


def init_env(
    cfg: ExperimentConfig, stream_factory: Callable[[str], np.random.Generator]
) -> World:
    """Materialize holders, the reference set, and the surrogate extractors."""
    d = cfg.feature_dim
    holders = []
    for spec in cfg.holders:
        rng = stream_factory(f"holder/{spec.id}")
        shift = _TIER_SHIFT[spec.quality_tier]
        scale = _TIER_SCALE[spec.quality_tier]
        feats = shift + scale * rng.standard_normal((spec.sample_count, d))
        samples = tuple(
            Sample(id=f"{spec.id}/s{i}", holder_id=spec.id, features=feats[i])
            for i in range(spec.sample_count)
        )
        holders.append(
            DataHolder(
                id=spec.id,
                quality_tier=spec.quality_tier,
                asking_price=spec.asking_price,
                join_round=spec.join_round,
                samples=samples,
            )
        )
    reference = stream_factory("reference").standard_normal((cfg.reference_size, d))
    embedder = copyright.SemanticEmbedder(d, cfg.embed_dim, stream_factory("embedder"))
    stack = copyright.FeatureStack(d, stream_factory("stack"))
    return World(
        cfg=cfg,
        holders=tuple(holders),
        reference=reference,
        embedder=embedder,
        stack=stack,
    )


@dataclass(frozen=True)
class SurrogateGenerator:
    """Gaussian stand-in for the generative model, fitted in feature space."""

    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "SurrogateGenerator":
        features = np.atleast_2d(features)
        mean = features.mean(axis=0)
        if features.shape[0] < 2:
            cov = np.zeros((features.shape[1], features.shape[1]))
        else:
            centered = features - mean
            cov = centered.T @ centered / (features.shape[0] - 1)
            cov = 0.5 * (cov + cov.T)
        return cls(mean=mean, cov=cov)

    @classmethod
    def untrained_prior(cls, dim: int, offset: float) -> "SurrogateGenerator":
        return cls(mean=np.full(dim, offset), cov=np.eye(dim))

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return rng.multivariate_normal(self.mean, self.cov, size=count, method="eigh")


@dataclass
class RoundRecord:
    round_index: int
    budget: float
    fractions: list[float]
    payments: list[float]
    joined: list[str]
    joined_samples: int
    sum_beta: float
    sum_chat: float
    n_cum: float
    c_cum: float
    x_cum: float
    budget_left: float
    t_left: int
    fid: float | None = None
    q: float | None = None
    # full per-sample scoring for the round; in-process only, not serialized
    attribution_result: "attribution.AttributionResult | None" = None
    copyright_result: "copyright.CopyrightResult | None" = None

    def to_dict(self) -> dict:
        return {
            "round": self.round_index,
            "budget": self.budget,
            "fractions": self.fractions,
            "payments": self.payments,
            "joined": self.joined,
            "joined_samples": self.joined_samples,
            "sum_beta": self.sum_beta,
            "sum_chat": self.sum_chat,
            "N_t": self.n_cum,
            "C_t": self.c_cum,
            "X_t": self.x_cum,
            "B_lt": self.budget_left,
            "t_l": self.t_left,
            "fid": self.fid,
            "q": self.q,
        }


class Episode:
    """One pass through the T rounds; owns the mutable environment state."""

    def __init__(
        self,
        world: World,
        stream_factory: Callable[[str], np.random.Generator],
        tag: str = "ep",
    ):
        self.world = world
        self.cfg = world.cfg
        self._streams = stream_factory
        self._tag = tag
        self.t = 1
        self.budget_left = float(self.cfg.total_budget)
        self.n_cum = 0.0
        self.c_cum = 0.0
        self.x_cum = 0.0
        self.pool: list[np.ndarray] = []  # recruited feature blocks, in join order
        self.generator: SurrogateGenerator | None = None
        n = len(world.holders)
        self.prev_beta_k = np.zeros(n)
        self.prev_chat_k = np.zeros(n)
        self.ledger: list[RoundRecord] = []

    # -- observation ------------------------------------------------------

    @property
    def t_left(self) -> int:
        return self.cfg.rounds - self.t + 1

    @property
    def done(self) -> bool:
        return self.t > self.cfg.rounds

    def available_mask(self) -> np.ndarray:
        return np.array([h.join_round <= self.t for h in self.world.holders])

    def state_vector(self) -> np.ndarray:
        """Outer observation (N_t, C_t, X_t, B_lt, t_l), scaled to O(1)."""
        total = max(self.world.total_samples, 1)
        return np.array(
            [
                self.n_cum / total,
                self.c_cum / total,
                self.x_cum / total,
                self.budget_left / self.cfg.total_budget,
                self.t_left / self.cfg.rounds,
            ]
        )

    # -- dynamics ---------------------------------------------------------

    def apply_allocation(
        self, budget: float, fractions: Sequence[float | Fraction]
    ) -> tuple[list[int], np.ndarray]:
        """Pay out budget * fractions; a holder joins iff its payment meets
        its asking price and it is already available. Returns (joined holder
        indices, payments). The last nonzero payment absorbs the rounding
        remainder so the payments sum to the budget exactly.
        """
        holders = self.world.holders
        if len(fractions) != len(holders):
            raise AllocationError("fraction vector length must match the holder roster")
        fracs = [Fraction(f) if not isinstance(f, Fraction) else f for f in fractions]
        if any(f < 0 for f in fracs):
            raise AllocationError("fractions must be nonnegative")
        if abs(float(sum(fracs)) - 1.0) > _FRACTION_TOL:
            raise AllocationError("fractions must sum to 1")
        if budget < 0 or budget > self.budget_left + _FRACTION_TOL:
            raise AllocationError(
                f"budget {budget} outside [0, {self.budget_left}] (overdraft)"
            )
        budget = min(float(budget), self.budget_left)

        payments = np.zeros(len(holders))
        nonzero = [k for k, f in enumerate(fracs) if f > 0]
        if budget > 0 and nonzero:
            for k in nonzero[:-1]:
                payments[k] = budget * float(fracs[k])
            payments[nonzero[-1]] = budget - payments.sum()
        joined = [
            k
            for k, h in enumerate(holders)
            if h.join_round <= self.t and payments[k] >= h.asking_price
        ]
        self.budget_left -= budget
        return joined, payments

    def run_round(
        self, budget: float, fractions: Sequence[float | Fraction]
    ) -> RoundRecord:
        """Execute one round: recruit, retrain, generate, score, log."""
        if self.done:
            raise AllocationError("episode already finished")
        joined, payments = self.apply_allocation(budget, fractions)
        holders = self.world.holders
        roster = self.world.holder_ids
        n = len(holders)

        beta_k = np.zeros(n)
        chat_k = np.zeros(n)
        sum_beta = 0.0
        sum_chat = 0.0
        joined_samples = 0
        attr = None
        cp = None

        if joined:
            joined_list: list[Sample] = []
            for k in joined:
                joined_list.extend(holders[k].samples)
                self.pool.append(np.stack([s.features for s in holders[k].samples]))
            joined_samples = len(joined_list)
            self.generator = SurrogateGenerator.fit(np.concatenate(self.pool))

            feats = np.stack([s.features for s in joined_list])
            counterparts = self.generator.sample(
                joined_samples, self._streams(f"{self._tag}/gen/t{self.t}")
            )
            tau = attribution.trak_scores(
                feats,
                self.cfg.attribution,
                self._streams(f"{self._tag}/trak/t{self.t}"),
                measure=attribution.Measure.DTRAK,
            )
            holder_ids = [s.holder_id for s in joined_list]
            attr = attribution.AttributionResult.from_raw(tau, holder_ids, roster, self.t)
            cp = copyright.score_round(
                joined_list,
                counterparts,
                self.world.embedder,
                self.world.stack,
                self.cfg.weight_semantic,
                self.cfg.weight_perceptual,
                roster,
                round_index=self.t,
            )
            beta_k = np.array([attr.holder_beta[h] for h in roster])
            chat_k = np.array([cp.holder_loss[h] for h in roster])
            sum_beta = float(attr.beta.sum())
            sum_chat = float(cp.loss.sum())
            self.n_cum += joined_samples
            self.x_cum += sum_beta
            self.c_cum += sum_chat

        record = RoundRecord(
            round_index=self.t,
            budget=float(budget),
            fractions=[float(f) for f in fractions],
            payments=[float(p) for p in payments],
            joined=[holders[k].id for k in joined],
            joined_samples=joined_samples,
            sum_beta=sum_beta,
            sum_chat=sum_chat,
            n_cum=self.n_cum,
            c_cum=self.c_cum,
            x_cum=self.x_cum,
            budget_left=self.budget_left,
            t_left=self.t_left,
            attribution_result=attr,
            copyright_result=cp,
        )
        self.prev_beta_k = beta_k
        self.prev_chat_k = chat_k
        self.ledger.append(record)
        self.t += 1
        if self.done:
            score = self.final_quality()
            record.fid = score.fid
            record.q = score.q
        return record

    def final_quality(self) -> quality.QualityScore:
        """Fréchet distance of a seeded generated batch against the reference."""
        generator = self.generator
        if generator is None:
            generator = SurrogateGenerator.untrained_prior(
                self.cfg.feature_dim, self.cfg.prior_offset
            )
        batch = generator.sample(
            self.cfg.generation_size, self._streams(f"{self._tag}/finalgen")
        )
        fid_value = quality.fid(
            quality.feature_stats(batch), quality.feature_stats(self.world.reference)
        )
        return quality.quality_score(fid_value)


def export_ledger_jsonl(ledger: Sequence[RoundRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in ledger:
            fh.write(json.dumps(record.to_dict()) + "\n")


_CSV_COLUMNS = [
    "round",
    "budget",
    "joined",
    "joined_samples",
    "sum_beta",
    "sum_chat",
    "N_t",
    "C_t",
    "X_t",
    "B_lt",
    "t_l",
    "fid",
    "q",
]


def export_ledger_csv(ledger: Sequence[RoundRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for record in ledger:
            row = record.to_dict()
            row["joined"] = ";".join(row["joined"])
            writer.writerow([row[c] for c in _CSV_COLUMNS])
