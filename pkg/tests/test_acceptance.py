"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines and timings. The comparison-matrix criteria share one matrix run over
all strategy pairs at the default configuration (the long pole; budgeted
under 30 minutes on a single core).
"""

import json
import time
from fractions import Fraction

import numpy as np
import pytest

from copybudget import attribution, harness, rl
from copybudget.allocators import ALL_PAIR_NAMES, StrategyPair
from copybudget.config import AttributionParams, ExperimentConfig, config_from_dict
from copybudget.copyright import copyright_losses, score_round
from copybudget.envsim import Episode, init_env, inner_reward
from copybudget.quality import feature_stats, fid, model_quality
from copybudget.rng import derive_stream
from copybudget.samples import Sample

MATRIX_SEEDS = (0, 1, 2, 3, 4)


def report(criterion: str, detail: str) -> None:
    print(f"\n[acceptance] {criterion}: PASS  ({detail})")


# -----------------------------------------------------------------------------
# Criterion 1: metric exactness


def test_criterion_1_metric_exactness():
    started = time.perf_counter()
    rng = derive_stream(0, "c1")
    for q in (2, 4, 8):
        stats = feature_stats(rng.standard_normal((50, q)))
        assert abs(fid(stats, stats)) <= 1e-8
        a = feature_stats(rng.standard_normal((50, q)))
        shift = rng.standard_normal(q)
        shifted = type(a)(mean=a.mean + shift, cov=a.cov, count=a.count)
        assert abs(fid(a, shifted) - float(shift @ shift)) <= 1e-8
    assert model_quality(0.0) == 1e8
    elapsed = time.perf_counter() - started
    assert elapsed < 1.0
    report("criterion 1 (metric exactness)", f"{elapsed:.3f}s")


# -----------------------------------------------------------------------------
# Criterion 2: copyright metric


def test_criterion_2_copyright_metric():
    started = time.perf_counter()
    from copybudget.copyright import FeatureStack, SemanticEmbedder

    d = 6
    embedder = SemanticEmbedder(d, 8, derive_stream(0, "c2emb"))
    stack = FeatureStack(d, derive_stream(0, "c2stack"))

    rng = derive_stream(0, "c2")
    feats = rng.standard_normal((10, d))
    samples = [Sample(id=f"s{i}", holder_id="h", features=feats[i]) for i in range(10)]

    # identical pairs: both distances exactly zero, losses exactly one
    same = score_round(samples, feats.copy(), embedder, stack, 0.5, 0.5, ["h"])
    assert np.all(same.dist_sem == 0.0) and np.all(same.dist_per == 0.0)
    assert np.all(same.loss == 1.0)

    # endpoints hit exactly
    generated = feats.copy()
    generated[3] += 25.0
    scored = score_round(samples, generated, embedder, stack, 0.5, 0.5, ["h"])
    assert scored.loss.min() == 0.0 and scored.loss.max() == 1.0
    assert scored.loss[3] == 0.0

    # bounds over 1000 random rounds
    for trial in range(1000):
        c = derive_stream(trial, "c2rand").random(8) * 10.0
        loss = copyright_losses(c)
        assert np.all(loss >= 0.0) and np.all(loss <= 1.0)

    elapsed = time.perf_counter() - started
    assert elapsed < 5.0
    report("criterion 2 (copyright metric)", f"{elapsed:.3f}s")


# -----------------------------------------------------------------------------
# Criterion 3: attribution fidelity


def test_criterion_3_attribution_fidelity():
    started = time.perf_counter()
    params = AttributionParams(subsets=32, subset_size=10, proj_dim=5, fit_regularizer=32.0)
    rhos = []
    for seed in range(20):
        rng = derive_stream(seed, "instance")
        noise = rng.standard_normal((20, 5))
        factor = rng.standard_normal((20, 1))
        x = np.sqrt(0.5) * factor + np.sqrt(0.5) * noise
        tau = attribution.trak_scores(
            x, params, derive_stream(seed, "trak"), attribution.Measure.DTRAK
        )
        deltas = attribution.loo_oracle(x, regularizer=params.fit_regularizer)
        rhos.append(harness.spearman(tau, deltas))
    mean_rho = float(np.mean(rhos))
    elapsed = time.perf_counter() - started
    assert mean_rho >= 0.8, f"mean Spearman {mean_rho:.3f} < 0.8"
    assert elapsed < 30.0
    report(
        "criterion 3 (attribution fidelity)",
        f"mean rho {mean_rho:.3f} over 20 instances, {elapsed:.1f}s",
    )


# -----------------------------------------------------------------------------
# Criterion 4: inner-agent optimality


def test_criterion_4_inner_agent_optimality():
    started = time.perf_counter()
    cfg = config_from_dict({"inner_parts": 5})
    assert cfg.inner_iterations == 10_000
    grid = rl.inner_grid(3, 5)
    hits = 0
    for seed in range(20):
        rng = derive_stream(seed, "c4")
        beta = rng.uniform(0.0, 20.0, 3)
        chat = rng.uniform(0.0, 20.0, 3)
        ctx = rl.InnerContext(
            budget=200.0,
            beta_k=beta,
            chat_k=chat,
            available=np.ones(3, bool),
            round_index=1,
            rng=derive_stream(seed, "c4train"),
        )
        p = rl.train_inner(ctx, cfg, grid)
        achieved = inner_reward(p, beta, chat, cfg.reward_contribution, cfg.reward_copyright)
        optimum = max(
            inner_reward(row, beta, chat, cfg.reward_contribution, cfg.reward_copyright)
            for row in grid.fractions
        )
        assert achieved >= optimum - 0.05 * abs(optimum) - 1e-9, (
            f"seed {seed}: {achieved:.4f} < 95% of {optimum:.4f}"
        )
        hits += 1
    elapsed = time.perf_counter() - started
    assert elapsed < 300.0
    report("criterion 4 (inner optimality)", f"{hits}/20 instances, {elapsed:.1f}s")


# -----------------------------------------------------------------------------
# Criteria 5-7 share one full matrix run at the default configuration.


@pytest.fixture(scope="module")
def matrix_run(tmp_path_factory):
    cfg = ExperimentConfig()
    pairs = [StrategyPair.parse(name) for name in ALL_PAIR_NAMES]
    started = time.perf_counter()
    reports = harness.run_matrix(cfg, pairs, list(MATRIX_SEEDS))
    elapsed = time.perf_counter() - started
    out_dir = tmp_path_factory.mktemp("matrix")
    harness.emit_reports(reports, out_dir)
    return cfg, {r.pair: r for r in reports}, elapsed, out_dir


def test_criterion_5_directional_reproduction(matrix_run):
    cfg, by_pair, elapsed, _ = matrix_run
    ours = by_pair["RL+RL"]
    for baseline_name in ("R+R", "L+L"):
        baseline = by_pair[baseline_name]
        assert ours.mean_q - ours.std_q > baseline.mean_q + baseline.std_q, (
            f"RL+RL ({ours.mean_q:.2f}+-{ours.std_q:.2f}) does not separate from "
            f"{baseline_name} ({baseline.mean_q:.2f}+-{baseline.std_q:.2f})"
        )
    # learned outer layer at least matches the random outer layer, per inner kind
    assert by_pair["RL+R"].mean_q >= by_pair["R+R"].mean_q
    assert by_pair["RL+RL"].mean_q >= by_pair["R+RL"].mean_q
    assert elapsed < 1800.0, f"matrix took {elapsed:.0f}s"
    detail = ", ".join(
        f"{name}={by_pair[name].mean_q:.1f}+-{by_pair[name].std_q:.1f}"
        for name in ("RL+RL", "R+R", "L+L", "RL+R", "R+RL")
    )
    report("criterion 5 (directional reproduction)", f"{detail}; {elapsed:.0f}s")


def test_criterion_6_ablation_direction(matrix_run):
    _, by_pair, _, _ = matrix_run
    ours = by_pair["RL+RL"].mean_q
    assert ours >= by_pair["RL+C"].mean_q
    assert ours >= by_pair["RL+CL"].mean_q
    report(
        "criterion 6 (ablation direction)",
        f"RL+RL={ours:.1f} vs RL+C={by_pair['RL+C'].mean_q:.1f}, "
        f"RL+CL={by_pair['RL+CL'].mean_q:.1f}",
    )


def test_criterion_7_conservation_suite(matrix_run):
    cfg, by_pair, _, out_dir = matrix_run
    prices = {h.id: h.asking_price for h in cfg.holders}
    join_rounds = {h.id: h.join_round for h in cfg.holders}
    holder_ids = [h.id for h in cfg.holders]
    violations = 0
    episodes = 0
    for report_obj in by_pair.values():
        for outcome in report_obj.outcomes:
            episodes += 1
            spent = 0.0
            last = (0.0, 0.0, 0.0)
            for record in outcome.ledger:
                spent += record.budget
                if abs(sum(record.fractions) - 1.0) > 1e-9:
                    violations += 1
                if sum(record.payments) != pytest.approx(record.budget, abs=1e-9):
                    violations += 1
                joined = set(record.joined)
                for hid, payment in zip(holder_ids, record.payments):
                    eligible = (
                        payment >= prices[hid]
                        and join_rounds[hid] <= record.round_index
                    )
                    if eligible != (hid in joined):
                        violations += 1
                now = (record.n_cum, record.c_cum, record.x_cum)
                if any(a < b - 1e-12 for a, b in zip(now, last)):
                    violations += 1
                last = now
            if spent > cfg.total_budget + 1e-9:
                violations += 1
    assert violations == 0
    report("criterion 7 (conservation suite)", f"0 violations across {episodes} episodes")


# -----------------------------------------------------------------------------
# Criterion 8: bitwise determinism of the summary CSV


def test_criterion_8_determinism(tmp_path):
    # reduced-size world, but the complete strategy matrix
    cfg = config_from_dict(
        {
            "total_budget": 200.0,
            "rounds": 2,
            "holders": [
                {"id": "a", "sample_count": 16, "quality_tier": "high", "asking_price": 20.0},
                {"id": "b", "sample_count": 12, "quality_tier": "medium", "asking_price": 30.0},
                {"id": "c", "sample_count": 10, "quality_tier": "low", "asking_price": 5.0},
                {"id": "d", "sample_count": 14, "quality_tier": "high", "asking_price": 25.0},
            ],
            "feature_dim": 4,
            "embed_dim": 6,
            "reference_size": 48,
            "generation_size": 48,
            "inner_iterations": 400,
            "outer_episodes": 4,
            "outer_updates_per_step": 2,
            "attribution": {"subsets": 8, "proj_dim": 4},
            "inner_parts": 3,
            "outer_bins": 4,
        }
    )
    pairs = [StrategyPair.parse(name) for name in ALL_PAIR_NAMES]
    started = time.perf_counter()
    for name in ("one", "two"):
        reports = harness.run_matrix(cfg, pairs, [0, 1])
        harness.emit_reports(reports, tmp_path / name)
    first = (tmp_path / "one/summary.csv").read_bytes()
    second = (tmp_path / "two/summary.csv").read_bytes()
    assert first == second
    assert (tmp_path / "one/per_seed.csv").read_bytes() == (
        tmp_path / "two/per_seed.csv"
    ).read_bytes()
    elapsed = time.perf_counter() - started
    report("criterion 8 (determinism)", f"bitwise-identical CSVs, {elapsed:.1f}s")


# -----------------------------------------------------------------------------
# Criterion 9: gradient checks


def _network_gradcheck_excess(seed: int) -> float:
    rng = derive_stream(seed, "c9")
    net = rl.QNetwork(5, 6, rng=derive_stream(seed, "c9net"), zero_head=False)
    net.w3 = derive_stream(seed, "c9head").standard_normal(net.w3.shape) * 0.5
    states = rng.standard_normal((4, 5))
    actions = rng.integers(0, 6, size=4)
    targets = rng.standard_normal(4)
    _, grads = net.loss_and_grads(states, actions, targets)
    eps = 1e-6
    worst = 0.0
    for name, grad in grads.items():
        param = getattr(net, name)
        it = np.nditer(param, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = param[idx]
            param[idx] = orig + eps
            up = net.loss_and_grads(states, actions, targets)[0]
            param[idx] = orig - eps
            down = net.loss_and_grads(states, actions, targets)[0]
            param[idx] = orig
            fd = (up - down) / (2 * eps)
            excess = abs(fd - grad[idx]) - (1e-4 * max(abs(fd), abs(grad[idx])) + 1e-8)
            worst = max(worst, excess)
            it.iternext()
    return worst


def test_criterion_9_gradient_checks():
    started = time.perf_counter()
    for seed in range(10):
        assert _network_gradcheck_excess(seed) <= 0.0, f"network gradcheck failed, seed {seed}"

    # surrogate model: analytic measurement gradients against central differences
    for seed in range(10):
        rng = derive_stream(seed, "c9m")
        x = rng.standard_normal((8, 4))
        model = attribution.fit_subset_model(x, 4.0)
        sample = x[0]
        eps = 1e-6
        for grad_fn, value_fn in (
            (model.grad_output, lambda th: float(th @ sample)),
            (model.grad_squared_output, lambda th: float(th @ sample) ** 2),
        ):
            analytic = grad_fn(sample)[0]
            for j in range(4):
                up, down = model.theta.copy(), model.theta.copy()
                up[j] += eps
                down[j] -= eps
                fd = (value_fn(up) - value_fn(down)) / (2 * eps)
                assert abs(fd - analytic[j]) <= 1e-4 * max(abs(fd), abs(analytic[j])) + 1e-8
    elapsed = time.perf_counter() - started
    report("criterion 9 (gradient checks)", f"10 network + 10 surrogate cases, {elapsed:.1f}s")
