"""Experiment harness: seeded runs, the strategy-pair matrix, rank
correlation analysis, and deterministic CSV / JSON-lines reports.

Each (pair, seed) cell builds its own world from the seed, trains the outer
agent when the pair calls for it, evaluates one greedy episode, and records
the final model quality. Aggregation is mean and sample standard deviation
over seeds. All report files have fixed column orders and 6-decimal floats,
so identical inputs reproduce byte-identical outputs.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import attribution, copyright, rl
from .allocators import InnerAllocator, OuterAllocator, StrategyPair
from .config import ExperimentConfig
from .envsim import Episode, SurrogateGenerator, World, export_ledger_jsonl, init_env
from .rng import derive_stream
from .samples import Sample


class HarnessError(RuntimeError):
    pass


class SpearmanUndefinedError(ValueError):
    """One of the rank vectors has zero variance."""


# ---------------------------------------------------------------------------
# Rank correlation


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks, ties replaced by the mean of their rank run."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_values = values[order]
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j + 1 < n and sorted_values[j + 1] == sorted_values[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average ranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValueError("inputs must be 1-D and of equal length")
    if len(x) < 2:
        raise ValueError("need at least two points")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx @ rx) * (ry @ ry))
    if denom == 0.0:
        raise SpearmanUndefinedError("zero rank variance")
    return float((rx @ ry) / denom)


# ---------------------------------------------------------------------------
# Episode execution


def run_episode(
    world: World,
    cfg: ExperimentConfig,
    outer: OuterAllocator,
    inner: InnerAllocator,
    stream_factory,
    tag: str = "eval",
) -> Episode:
    """Drive one full episode with a fixed outer strategy."""
    episode = Episode(world, stream_factory, tag=tag)
    while not episode.done:
        budget = outer.budget(episode)
        ctx = rl.InnerContext(
            budget=budget,
            beta_k=episode.prev_beta_k,
            chat_k=episode.prev_chat_k,
            available=episode.available_mask(),
            round_index=episode.t,
            rng=stream_factory(f"{tag}/inner/t{episode.t}"),
        )
        episode.run_round(budget, inner.fractions(ctx))
    return episode


@dataclass
class SeedOutcome:
    seed: int
    q: float
    fid: float
    ledger: list
    training_qs: list[float]


@dataclass
class RunReport:
    pair: str
    seeds: tuple[int, ...]
    q_values: list[float]
    mean_q: float
    std_q: float
    outcomes: list[SeedOutcome]
    wall_clock: float


def run_pair_seed(cfg: ExperimentConfig, pair: StrategyPair, seed: int) -> SeedOutcome:
    """One (strategy pair, seed) cell: build the world, train if the outer
    layer is learned, then evaluate a single greedy episode."""
    def streams(label: str) -> np.random.Generator:
        return derive_stream(seed, label)

    world = init_env(cfg, streams)
    grid = rl.inner_grid(len(cfg.holders), cfg.inner_parts)
    levels = rl.outer_levels(cfg.total_budget, cfg.outer_bins)
    inner = InnerAllocator(pair.inner, cfg, grid)

    training_qs: list[float] = []
    if pair.outer == "rl":
        result = rl.train_outer(world, cfg, inner.fractions, streams, tag="outer")
        outer = OuterAllocator("rl", cfg, levels, policy=result.policy)
        training_qs = result.episode_qs
    else:
        outer = OuterAllocator(pair.outer, cfg, levels, rng=streams("outer/strategy"))

    episode = run_episode(world, cfg, outer, inner, streams, tag="eval")
    final = episode.ledger[-1]
    return SeedOutcome(
        seed=seed,
        q=float(final.q),
        fid=float(final.fid),
        ledger=episode.ledger,
        training_qs=training_qs,
    )


def run_matrix(
    cfg: ExperimentConfig,
    pairs: Sequence[StrategyPair],
    seeds: Sequence[int],
) -> list[RunReport]:
    """Full cross product of pairs and seeds, reduced in (pair, seed) order."""
    reports = []
    for pair in pairs:
        started = time.perf_counter()
        outcomes = []
        for seed in seeds:
            try:
                outcomes.append(run_pair_seed(cfg, pair, seed))
            except Exception as exc:
                raise HarnessError(f"episode failed for {pair.name} seed {seed}: {exc}") from exc
        qs = [o.q for o in outcomes]
        reports.append(
            RunReport(
                pair=pair.name,
                seeds=tuple(seeds),
                q_values=qs,
                mean_q=float(np.mean(qs)),
                std_q=float(np.std(qs, ddof=1)) if len(qs) > 1 else 0.0,
                outcomes=outcomes,
                wall_clock=time.perf_counter() - started,
            )
        )
    return reports


# ---------------------------------------------------------------------------
# Reports


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def emit_reports(reports: Sequence[RunReport], out_dir: str | Path) -> dict[str, Path]:
    """Write summary.csv, per-seed quality CSV, and per-episode ledgers."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    summary = out / "summary.csv"
    lines = ["pair,mean_q,std_q,n_seeds,seeds"]
    for report in reports:
        seeds = ";".join(str(s) for s in report.seeds)
        lines.append(
            f"{report.pair},{_fmt(report.mean_q)},{_fmt(report.std_q)},{len(report.seeds)},{seeds}"
        )
    summary.write_text("\n".join(lines) + "\n", encoding="utf-8")

    per_seed = out / "per_seed.csv"
    rows = ["pair,seed,q,fid"]
    for report in reports:
        for outcome in report.outcomes:
            rows.append(
                f"{report.pair},{outcome.seed},{_fmt(outcome.q)},{_fmt(outcome.fid)}"
            )
    per_seed.write_text("\n".join(rows) + "\n", encoding="utf-8")

    ledger_dir = out / "ledgers"
    ledger_dir.mkdir(exist_ok=True)
    for report in reports:
        for outcome in report.outcomes:
            export_ledger_jsonl(
                outcome.ledger, ledger_dir / f"{report.pair}-{outcome.seed}.jsonl"
            )

    meta = out / "reports.json"
    meta.write_text(
        json.dumps(
            [
                {
                    "pair": r.pair,
                    "seeds": list(r.seeds),
                    "q_values": r.q_values,
                    "mean_q": r.mean_q,
                    "std_q": r.std_q,
                    "wall_clock": r.wall_clock,
                }
                for r in reports
            ],
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return {"summary": summary, "per_seed": per_seed, "ledgers": ledger_dir, "meta": meta}


# ---------------------------------------------------------------------------
# Contribution vs copyright-loss analysis


@dataclass
class CorrelationReport:
    sample_ids: list[str]
    holder_ids: list[str]
    beta: np.ndarray
    chat: np.ndarray
    rho: float
    group_a: np.ndarray  # high contribution, low copyright loss
    group_b: np.ndarray  # low contribution, high copyright loss
    thresholds: dict[str, float]


def correlate(cfg: ExperimentConfig, seed: int) -> CorrelationReport:
    """Score every round-1-available sample in one jointly-trained round and
    rank-correlate contribution against copyright loss. Groups are the top
    and bottom quartiles of each axis."""
    def streams(label: str) -> np.random.Generator:
        return derive_stream(seed, label)

    world = init_env(cfg, streams)
    pool: list[Sample] = []
    for holder in world.holders:
        if holder.join_round <= 1:
            pool.extend(holder.samples)
    if len(pool) < 2:
        raise HarnessError("not enough round-1 samples to correlate")

    features = np.stack([s.features for s in pool])
    generator = SurrogateGenerator.fit(features)
    counterparts = generator.sample(len(pool), streams("correlate/gen"))
    tau = attribution.trak_scores(
        features, cfg.attribution, streams("correlate/trak"), attribution.Measure.DTRAK
    )
    beta = attribution.normalize_contributions(tau)
    scored = copyright.score_round(
        pool,
        counterparts,
        world.embedder,
        world.stack,
        cfg.weight_semantic,
        cfg.weight_perceptual,
        world.holder_ids,
        round_index=1,
    )
    chat = scored.loss
    rho = spearman(beta, chat)
    beta_lo, beta_hi = np.quantile(beta, [0.25, 0.75])
    chat_lo, chat_hi = np.quantile(chat, [0.25, 0.75])
    return CorrelationReport(
        sample_ids=[s.id for s in pool],
        holder_ids=[s.holder_id for s in pool],
        beta=beta,
        chat=chat,
        rho=rho,
        group_a=(beta >= beta_hi) & (chat <= chat_lo),
        group_b=(beta <= beta_lo) & (chat >= chat_hi),
        thresholds={
            "beta_q25": float(beta_lo),
            "beta_q75": float(beta_hi),
            "chat_q25": float(chat_lo),
            "chat_q75": float(chat_hi),
        },
    )


def emit_correlation(report: CorrelationReport, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "correlation.csv"
    lines = ["sample_id,holder_id,beta,chat,group"]
    for i, sid in enumerate(report.sample_ids):
        group = "A" if report.group_a[i] else "B" if report.group_b[i] else ""
        lines.append(
            f"{sid},{report.holder_ids[i]},{_fmt(report.beta[i])},{_fmt(report.chat[i])},{group}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "correlation.json").write_text(
        json.dumps({"rho": report.rho, "thresholds": report.thresholds}, indent=2) + "\n",
        encoding="utf-8",
    )
    return path
