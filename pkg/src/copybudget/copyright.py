"""Two-part similarity metric between training samples and generated output.

The semantic side compares fixed-size embeddings by mean squared error; the
perceptual side compares channel-normalized multi-layer feature maps with
per-layer channel weights, averaged over spatial positions. Both sides can
run on the built-in seeded surrogate extractors or on tensors ingested from
JSON-lines files (one record per item), so real encoder outputs plug in
without touching the metric code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .samples import Sample, features_matrix, sum_by_holder

_NORM_FLOOR = 1e-12

DEFAULT_LAYER_SHAPES = ((4, 4, 4), (8, 2, 2))


class MetricError(ValueError):
    pass


class SemanticEmbedder:
    """Seeded random linear map plus tanh, standing in for a semantic encoder."""

    def __init__(self, feature_dim: int, embed_dim: int, rng: np.random.Generator):
        self.weights = rng.standard_normal((embed_dim, feature_dim)) / np.sqrt(feature_dim)

    def embed(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        return np.tanh(features @ self.weights.T)


class FeatureStack:
    """Seeded multi-layer feature extractor producing (C, H, W) maps per layer.

    Each layer applies its own fixed random linear map to the input features
    followed by tanh; layer weights default to all-ones channel vectors.
    """

    def __init__(
        self,
        feature_dim: int,
        rng: np.random.Generator,
        layer_shapes: Sequence[tuple[int, int, int]] = DEFAULT_LAYER_SHAPES,
        layer_weights: Sequence[np.ndarray] | None = None,
    ):
        self.layer_shapes = tuple(tuple(s) for s in layer_shapes)
        self.maps = [
            rng.standard_normal((c * h * w, feature_dim)) / np.sqrt(feature_dim)
            for (c, h, w) in self.layer_shapes
        ]
        if layer_weights is None:
            layer_weights = [np.ones(c) for (c, _, _) in self.layer_shapes]
        self.layer_weights = [np.asarray(w, dtype=float) for w in layer_weights]
        for w, (c, _, _) in zip(self.layer_weights, self.layer_shapes):
            if w.shape != (c,):
                raise MetricError("layer weight length must equal the channel count")

    def activations(self, features: np.ndarray) -> list[np.ndarray]:
        features = np.asarray(features, dtype=float)
        out = []
        for mat, (c, h, w) in zip(self.maps, self.layer_shapes):
            out.append(np.tanh(mat @ features).reshape(c, h, w))
        return out


def channel_normalize(tensor: np.ndarray) -> np.ndarray:
    """Scale each spatial position's channel vector to unit norm (zero stays zero)."""
    norms = np.sqrt(np.sum(tensor**2, axis=0, keepdims=True))
    safe = np.where(norms > _NORM_FLOOR, norms, 1.0)
    return np.where(norms > _NORM_FLOOR, tensor / safe, 0.0)


def semantic_distance(e1: np.ndarray, e2: np.ndarray) -> float:
    """Mean squared difference between two embeddings."""
    e1 = np.asarray(e1, dtype=float)
    e2 = np.asarray(e2, dtype=float)
    if e1.shape != e2.shape:
        raise MetricError("embedding dimensions differ")
    return float(np.mean((e1 - e2) ** 2))


def perceptual_distance_tensors(
    layers_x: Sequence[np.ndarray],
    layers_y: Sequence[np.ndarray],
    layer_weights: Sequence[np.ndarray],
) -> float:
    """Layer-weighted squared distance between channel-normalized feature maps.

    Per layer: average over spatial positions of the squared norm of the
    weighted channel difference, then sum across layers.
    """
    if len(layers_x) != len(layers_y):
        raise MetricError("layer counts differ")
    total = 0.0
    for zx, zy, w in zip(layers_x, layers_y, layer_weights):
        if zx.shape != zy.shape:
            raise MetricError("feature map shapes differ")
        _, h, wdt = zx.shape
        diff = w[:, None, None] * (channel_normalize(zx) - channel_normalize(zy))
        total += float(np.sum(diff**2)) / (h * wdt)
    return total


def perceptual_distance(
    x: Sample | np.ndarray, y: Sample | np.ndarray, stack: FeatureStack
) -> float:
    fx = x.features if isinstance(x, Sample) else np.asarray(x, dtype=float)
    fy = y.features if isinstance(y, Sample) else np.asarray(y, dtype=float)
    return perceptual_distance_tensors(
        stack.activations(fx), stack.activations(fy), stack.layer_weights
    )


def comprehensive_similarity(ds: float, dp: float, a: float, b: float) -> float:
    if a < 0 or b < 0:
        raise MetricError("weights must be nonnegative")
    return a * ds + b * dp


def copyright_losses(c: np.ndarray) -> np.ndarray:
    """1 - minmax(c): nearest pair gets loss 1, farthest 0; flat input -> all 1.

    Flat within machine tolerance counts as flat (identical samples against
    a degenerate generator produce rounding dust, not a real spread).
    """
    c = np.asarray(c, dtype=float)
    if c.size < 1:
        raise MetricError("need at least one similarity value")
    lo, hi = float(c.min()), float(c.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi), abs(lo)):
        return np.ones_like(c)
    return 1.0 - (c - lo) / (hi - lo)


def holder_copyright(
    losses: np.ndarray,
    holder_ids: Sequence[str],
    holder_order: Sequence[str],
) -> dict[str, float]:
    return sum_by_holder(losses, holder_ids, holder_order)


@dataclass(frozen=True)
class CopyrightResult:
    dist_sem: np.ndarray
    dist_per: np.ndarray
    similarity: np.ndarray
    loss: np.ndarray
    holder_loss: dict[str, float]
    round_index: int
    c_min: float
    c_max: float


def score_round(
    train: Sequence[Sample],
    generated: np.ndarray,
    embedder: SemanticEmbedder,
    stack: FeatureStack,
    a: float,
    b: float,
    holder_order: Sequence[str],
    round_index: int = 0,
) -> CopyrightResult:
    """Score one round: each training sample against its generated counterpart."""
    generated = np.atleast_2d(np.asarray(generated, dtype=float))
    if generated.shape[0] != len(train):
        raise MetricError(
            f"{len(train)} training samples but {generated.shape[0]} generated items"
        )
    train_features = features_matrix(train)
    emb_train = embedder.embed(train_features)
    emb_gen = embedder.embed(generated)
    ds = np.mean((emb_train - emb_gen) ** 2, axis=1)
    dp = np.array(
        [
            perceptual_distance(train_features[i], generated[i], stack)
            for i in range(len(train))
        ]
    )
    similarity = a * ds + b * dp
    loss = copyright_losses(similarity)
    holder_ids = [s.holder_id for s in train]
    return CopyrightResult(
        dist_sem=ds,
        dist_per=dp,
        similarity=similarity,
        loss=loss,
        holder_loss=holder_copyright(loss, holder_ids, holder_order),
        round_index=round_index,
        c_min=float(similarity.min()),
        c_max=float(similarity.max()),
    )


@dataclass(frozen=True)
class FeatureRecord:
    """Precomputed per-item embedding and layer tensors from an external encoder."""

    id: str
    embedding: np.ndarray
    layers: tuple[np.ndarray, ...]


def load_feature_records(path: str | Path) -> dict[str, FeatureRecord]:
    """Read JSON-lines records: {"id", "embedding": [...], "layers": [[[[...]]]]}."""
    records: dict[str, FeatureRecord] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MetricError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            try:
                record = FeatureRecord(
                    id=str(raw["id"]),
                    embedding=np.asarray(raw["embedding"], dtype=float),
                    layers=tuple(np.asarray(layer, dtype=float) for layer in raw["layers"]),
                )
            except KeyError as exc:
                raise MetricError(f"{path}:{lineno}: missing field {exc}") from None
            for layer in record.layers:
                if layer.ndim != 3:
                    raise MetricError(f"{path}:{lineno}: layers must be (C, H, W) tensors")
            records[record.id] = record
    return records


def distances_from_records(
    x: FeatureRecord,
    y: FeatureRecord,
    layer_weights: Sequence[np.ndarray] | None = None,
) -> tuple[float, float]:
    """(semantic, perceptual) distances between two ingested records."""
    if layer_weights is None:
        layer_weights = [np.ones(layer.shape[0]) for layer in x.layers]
    ds = semantic_distance(x.embedding, y.embedding)
    dp = perceptual_distance_tensors(list(x.layers), list(y.layers), list(layer_weights))
    return ds, dp
