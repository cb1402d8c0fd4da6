"""The basic datum flowing through scoring: a feature vector owned by a holder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class IntegrityError(ValueError):
    """A sample references a holder that does not exist."""


@dataclass(frozen=True)
class Sample:
    id: str
    holder_id: str
    features: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", np.asarray(self.features, dtype=float))
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"sample {self.id}: non-finite features")


def features_matrix(samples: Sequence[Sample]) -> np.ndarray:
    return np.stack([s.features for s in samples])


def sum_by_holder(
    values: np.ndarray,
    holder_ids: Sequence[str],
    holder_order: Iterable[str],
) -> dict[str, float]:
    """Sum per-sample values into a per-holder map.

    Holders without samples get 0. A sample mapped to an unknown holder is
    an integrity error, so totals always partition the global sum.
    """
    values = np.asarray(values, dtype=float)
    if len(values) != len(holder_ids):
        raise ValueError("values and holder_ids must be aligned")
    totals = {holder: 0.0 for holder in holder_order}
    for value, holder in zip(values, holder_ids):
        if holder not in totals:
            raise IntegrityError(f"sample mapped to unknown holder {holder!r}")
        totals[holder] += float(value)
    return totals
