import json

import numpy as np
import pytest

from copybudget.copyright import (
    FeatureStack,
    MetricError,
    SemanticEmbedder,
    channel_normalize,
    comprehensive_similarity,
    copyright_losses,
    distances_from_records,
    holder_copyright,
    load_feature_records,
    perceptual_distance,
    perceptual_distance_tensors,
    score_round,
    semantic_distance,
)
from copybudget.rng import derive_stream
from copybudget.samples import IntegrityError, Sample


def make_samples(features, holders):
    return [
        Sample(id=f"s{i}", holder_id=h, features=f)
        for i, (f, h) in enumerate(zip(features, holders))
    ]


def test_semantic_identical_is_zero():
    e = np.array([0.3, -0.2, 1.0])
    assert semantic_distance(e, e) == 0.0


def test_semantic_hand_case():
    assert semantic_distance(np.array([0.0, 0.0]), np.array([2.0, 0.0])) == 2.0


def test_semantic_symmetry():
    rng = derive_stream(0, "sem")
    a, b = rng.standard_normal(8), rng.standard_normal(8)
    assert semantic_distance(a, b) == semantic_distance(b, a)


def test_semantic_dimension_mismatch():
    with pytest.raises(MetricError):
        semantic_distance(np.zeros(3), np.zeros(4))


def test_perceptual_self_distance_zero():
    stack = FeatureStack(6, derive_stream(0, "stack"))
    x = derive_stream(1, "x").standard_normal(6)
    assert perceptual_distance(x, x, stack) == 0.0


def test_perceptual_symmetry():
    stack = FeatureStack(6, derive_stream(0, "stack"))
    rng = derive_stream(2, "xy")
    x, y = rng.standard_normal(6), rng.standard_normal(6)
    assert perceptual_distance(x, y, stack) == pytest.approx(
        perceptual_distance(y, x, stack)
    )


def test_perceptual_zero_weights_annihilate():
    shapes = ((4, 4, 4), (8, 2, 2))
    stack = FeatureStack(
        6,
        derive_stream(0, "stack"),
        layer_shapes=shapes,
        layer_weights=[np.zeros(4), np.zeros(8)],
    )
    rng = derive_stream(3, "xy")
    x, y = rng.standard_normal(6), rng.standard_normal(6)
    assert perceptual_distance(x, y, stack) == 0.0


def test_perceptual_single_layer_hand_case():
    # one layer, 1x1 spatial, 2 channels, unit weights: distance is the
    # squared norm of the difference of the normalized channel vectors
    u = np.array([3.0, 4.0]).reshape(2, 1, 1)
    v = np.array([1.0, 0.0]).reshape(2, 1, 1)
    got = perceptual_distance_tensors([u], [v], [np.ones(2)])
    nu = np.array([0.6, 0.8])
    nv = np.array([1.0, 0.0])
    assert got == pytest.approx(float(np.sum((nu - nv) ** 2)))


def test_channel_normalization_unit_or_zero():
    rng = derive_stream(4, "norm")
    t = rng.standard_normal((5, 3, 2))
    t[:, 0, 0] = 0.0
    normed = channel_normalize(t)
    norms = np.sqrt(np.sum(normed**2, axis=0))
    assert abs(norms[0, 0]) <= 1e-9
    others = np.delete(norms.ravel(), 0)
    assert np.all(np.abs(others - 1.0) <= 1e-9)


def test_comprehensive_similarity_cases():
    assert comprehensive_similarity(0.2, 0.4, 0.5, 0.5) == pytest.approx(0.3)
    assert comprehensive_similarity(0.7, 123.0, 1.0, 0.0) == pytest.approx(0.7)
    assert comprehensive_similarity(0.0, 0.0, 0.5, 0.5) == 0.0
    with pytest.raises(MetricError):
        comprehensive_similarity(1.0, 1.0, -0.1, 0.5)


def test_copyright_losses_cases():
    assert np.allclose(copyright_losses(np.array([0.1, 0.3, 0.5])), [1.0, 0.5, 0.0])
    assert np.allclose(copyright_losses(np.array([7.0])), [1.0])


def test_copyright_losses_monotone():
    rng = derive_stream(5, "mono")
    c = rng.random(50)
    loss = copyright_losses(c)
    order = np.argsort(c)
    assert np.all(np.diff(loss[order]) <= 1e-12)


def test_holder_copyright_sums():
    losses = np.array([0.5, 0.5, 0.25])
    totals = holder_copyright(losses, ["a", "a", "b"], ["a", "b", "c"])
    assert totals == {"a": 1.0, "b": 0.25, "c": 0.0}
    assert sum(totals.values()) == pytest.approx(losses.sum())


def test_holder_copyright_unmapped_sample():
    with pytest.raises(IntegrityError):
        holder_copyright(np.array([1.0]), ["ghost"], ["a"])


def build_world(n=6, d=5, holders=("a", "a", "a", "b", "b", "c")):
    rng = derive_stream(7, "world")
    feats = rng.standard_normal((n, d))
    samples = make_samples(feats, holders)
    embedder = SemanticEmbedder(d, 8, derive_stream(7, "emb"))
    stack = FeatureStack(d, derive_stream(7, "stack"))
    return samples, feats, embedder, stack


def test_score_round_exact_copies():
    samples, feats, embedder, stack = build_world()
    result = score_round(samples, feats.copy(), embedder, stack, 0.5, 0.5, ["a", "b", "c"])
    assert np.allclose(result.similarity, 0.0)
    assert np.allclose(result.loss, 1.0)
    assert result.holder_loss == {"a": 3.0, "b": 2.0, "c": 1.0}


def test_score_round_single_far_counterpart():
    samples, feats, embedder, stack = build_world()
    generated = feats.copy()
    generated[2] += 40.0
    result = score_round(samples, generated, embedder, stack, 0.5, 0.5, ["a", "b", "c"])
    assert result.loss[2] == 0.0
    kept = np.delete(result.loss, 2)
    assert np.allclose(kept, 1.0)


def test_score_round_label_permutation_equivariance():
    samples, feats, embedder, stack = build_world()
    generated = feats + 0.1
    base = score_round(samples, generated, embedder, stack, 0.5, 0.5, ["a", "b", "c"])
    swap = {"a": "b", "b": "a", "c": "c"}
    swapped = [
        Sample(id=s.id, holder_id=swap[s.holder_id], features=s.features) for s in samples
    ]
    other = score_round(swapped, generated, embedder, stack, 0.5, 0.5, ["a", "b", "c"])
    assert other.holder_loss["b"] == pytest.approx(base.holder_loss["a"])
    assert other.holder_loss["a"] == pytest.approx(base.holder_loss["b"])


def test_score_round_count_mismatch():
    samples, feats, embedder, stack = build_world()
    with pytest.raises(MetricError):
        score_round(samples, feats[:-1], embedder, stack, 0.5, 0.5, ["a", "b", "c"])


def test_score_round_deterministic():
    samples, feats, embedder, stack = build_world()
    generated = feats + 0.3
    a = score_round(samples, generated, embedder, stack, 0.5, 0.5, ["a", "b", "c"])
    b = score_round(samples, generated, embedder, stack, 0.5, 0.5, ["a", "b", "c"])
    assert np.array_equal(a.similarity, b.similarity)
    assert np.array_equal(a.loss, b.loss)


def test_feature_record_ingestion(tmp_path):
    stack = FeatureStack(5, derive_stream(9, "stack"))
    embedder = SemanticEmbedder(5, 8, derive_stream(9, "emb"))
    rng = derive_stream(9, "xy")
    x, y = rng.standard_normal(5), rng.standard_normal(5)

    path = tmp_path / "features.jsonl"
    with open(path, "w") as fh:
        for name, vec in (("train-0", x), ("gen-0", y)):
            fh.write(
                json.dumps(
                    {
                        "id": name,
                        "embedding": embedder.embed(vec).tolist(),
                        "layers": [t.tolist() for t in stack.activations(vec)],
                    }
                )
                + "\n"
            )
    records = load_feature_records(path)
    assert set(records) == {"train-0", "gen-0"}
    ds, dp = distances_from_records(records["train-0"], records["gen-0"])
    assert ds == pytest.approx(semantic_distance(embedder.embed(x), embedder.embed(y)))
    assert dp == pytest.approx(perceptual_distance(x, y, stack))


def test_feature_record_bad_json(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a"\n')
    with pytest.raises(MetricError, match="invalid JSON"):
        load_feature_records(path)
