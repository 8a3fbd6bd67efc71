"""Embedding losses over tagged feature batches, with exact gradients.

Two terms act on the feature space:

* compactness: for every sub-class present in the batch, the double sum
  of squared Euclidean distances over all ordered feature pairs within
  the sub-class (each unordered pair counted twice);
* diversity: for every ordered pair of sub-classes from *different*
  classes, a margin penalty ``delta - D_H`` on their directed Hausdorff
  distance ``D_H = max_a min_b ||a - b||^2`` (squared point distances).
  With ``hinge`` enabled (default) the penalty clamps at zero once the
  margin is met; disabling it keeps the raw linear term.

Gradients returned here are the exact analytic gradients of the
implemented scalars, including the factor-4 constant of the compactness
double sum and the hinge gate. The diversity gradient flows only through
the feature pair achieving the max-min of each active term; ties resolve
to the lexicographically smallest (outer, inner) index pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossParams:
    delta: float = 1.0  # margin on squared Hausdorff distance
    beta: float = 0.0001  # diversity tradeoff
    hinge: bool = True

    def validate(self) -> None:
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")


@dataclass(frozen=True)
class FeatureBatch:
    """Mini-batch of embeddings tagged with (class_id, subclass_id)."""

    features: np.ndarray  # (n, p) float64
    tags: np.ndarray  # (n, 2) int64

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, np.float64))
        object.__setattr__(self, "tags", np.asarray(self.tags, np.int64))
        if self.features.ndim != 2:
            raise ValueError(f"features must be (n, p), got {self.features.shape}")
        if self.tags.shape != (self.features.shape[0], 2):
            raise ValueError(
                f"tags must be (n, 2), got {self.tags.shape} for n={self.features.shape[0]}"
            )
        if self.features.size and not np.isfinite(self.features).all():
            raise ValueError("features contain NaN or Inf")

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class LossReport:
    l0: float  # compactness term, always >= 0
    ld: float  # diversity term (may be negative without hinge)
    total: float  # l0 + beta * ld
    grads: np.ndarray | None = None  # (n, p) d(total)/d(features)


def _groups(batch: FeatureBatch) -> dict[tuple[int, int], np.ndarray]:
    """Member indices per (class, subclass), in sorted tag order."""
    out: dict[tuple[int, int], np.ndarray] = {}
    if len(batch) == 0:
        return out
    tags = [tuple(t) for t in batch.tags]
    for key in sorted(set(tags)):
        out[key] = np.array([i for i, t in enumerate(tags) if t == key], dtype=np.int64)
    return out


def subclass_loss(features: np.ndarray) -> float:
    """Double sum of squared distances over all ordered pairs."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 1:
        raise ValueError("need a non-empty (n, p) feature array")
    diffs = f[:, None, :] - f[None, :, :]
    return float((diffs**2).sum())


def embedding_loss(batch: FeatureBatch) -> float:
    """Sum of subclass_loss over every sub-class present in the batch."""
    total = 0.0
    for idx in _groups(batch).values():
        if len(idx) >= 2:
            total += subclass_loss(batch.features[idx])
    return total


def _directed_hausdorff_sq(a: np.ndarray, b: np.ndarray) -> tuple[float, int, int]:
    """(value, outer index into a, inner index into b); first-index ties."""
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    inner = d2.argmin(axis=1)
    mins = d2[np.arange(len(a)), inner]
    outer = int(mins.argmax())
    return float(mins[outer]), outer, int(inner[outer])


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Directed Hausdorff distance with squared Euclidean point distance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or len(a) == 0 or len(b) == 0:
        raise ValueError("hausdorff requires two non-empty (n, p) sets")
    return _directed_hausdorff_sq(a, b)[0]


def _diversity_terms(batch: FeatureBatch, params: LossParams):
    """Yield (margin contribution, active, global a index, global b index)
    for every ordered cross-class sub-class pair present in the batch."""
    groups = _groups(batch)
    keys = list(groups)
    for ka in keys:
        for kb in keys:
            if ka[0] == kb[0]:  # same class: skip (includes ka == kb)
                continue
            ia, ib = groups[ka], groups[kb]
            value, ao, bo = _directed_hausdorff_sq(
                batch.features[ia], batch.features[ib]
            )
            term = params.delta - value
            active = term > 0.0 if params.hinge else True
            contrib = max(0.0, term) if params.hinge else term
            yield contrib, active, int(ia[ao]), int(ib[bo])


def diversity_loss(batch: FeatureBatch, params: LossParams) -> float:
    """Margin penalty over ordered cross-class sub-class pairs."""
    params.validate()
    return float(sum(c for c, _, _, _ in _diversity_terms(batch, params)))


def total_loss(batch: FeatureBatch, params: LossParams) -> LossReport:
    """Scalar terms only; use loss_gradients for the gradient as well."""
    params.validate()
    l0 = embedding_loss(batch)
    ld = diversity_loss(batch, params)
    return LossReport(l0=l0, ld=ld, total=l0 + params.beta * ld)


def loss_gradients(batch: FeatureBatch, params: LossParams) -> LossReport:
    """Losses plus the exact gradient of the combined term per feature."""
    params.validate()
    f = batch.features
    grads = np.zeros_like(f)

    l0 = 0.0
    for idx in _groups(batch).values():
        if len(idx) < 2:
            continue
        sub = f[idx]
        l0 += subclass_loss(sub)
        # d/d f_a of sum_o sum_i ||f_o - f_i||^2 = 4 (m f_a - sum f)
        grads[idx] += 4.0 * (len(idx) * sub - sub.sum(axis=0))

    ld = 0.0
    for contrib, active, ga, gb in _diversity_terms(batch, params):
        ld += contrib
        if active:
            d = f[ga] - f[gb]
            grads[ga] += params.beta * (-2.0 * d)
            grads[gb] += params.beta * (2.0 * d)

    return LossReport(l0=l0, ld=ld, total=l0 + params.beta * ld, grads=grads)
