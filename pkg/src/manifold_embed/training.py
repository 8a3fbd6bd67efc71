"""Joint training loop: softmax cross-entropy plus the manifold
embedding penalty, assembled per batch and optimized with plain SGD.

The scalar objective is ``ce_mean + dmem_weight * (l0 + beta * ld)``.
The embedding terms act on the feature layer only, so their gradients
are injected at that point and flow backward with the cross-entropy
gradient in a single pass. When ``dmem_weight`` is zero the embedding
code path is skipped entirely; a baseline run is then bit-for-bit
identical to a build without it.

Logging is deterministic. ``wall_ms`` is written as 0 unless the
config opts into wall-clock timing, because measured times would break
byte-identical reruns of the same seed.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from manifold_embed import network as net
from manifold_embed.losses import FeatureBatch, LossParams, loss_gradients
from manifold_embed.manifold import ManifoldParams, SubClassPartition
from manifold_embed.network import ModelParams, NetworkSpec
from manifold_embed.seeding import derive_seed, rng_from_seed

CSV_HEADER = "iter,ce,l0,ld,total,grad_norm,wall_ms"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    iterations: int = 5000
    batch_size: int = 84
    dmem_weight: float = 0.0001  # weight of the embedding block vs. cross-entropy
    loss_params: LossParams = field(default_factory=LossParams)
    manifold_params: ManifoldParams = field(default_factory=ManifoldParams)
    seed: int = 0
    log_every: int = 100
    wall_clock: bool = False

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be positive, got {self.iterations}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.dmem_weight < 0:
            raise ValueError(f"dmem_weight must be non-negative, got {self.dmem_weight}")
        if self.log_every < 1:
            raise ValueError(f"log_every must be positive, got {self.log_every}")
        self.loss_params.validate()
        self.manifold_params.validate()


@dataclass(frozen=True)
class LogRow:
    iteration: int
    ce: float
    l0: float
    ld: float
    total: float
    grad_norm: float
    wall_ms: int


@dataclass
class TrainLog:
    rows: list[LogRow] = field(default_factory=list)

    def append(self, row: LogRow) -> None:
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise ValueError("log iterations must be strictly increasing")
        self.rows.append(row)

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.iteration},{r.ce!r},{r.l0!r},{r.ld!r},"
                f"{r.total!r},{r.grad_norm!r},{r.wall_ms}"
            )
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_csv().encode())


class NonFiniteLossError(RuntimeError):
    """Raised when a training step produces NaN or Inf; carries the
    offending batch so the caller can dump diagnostics."""

    def __init__(self, iteration: int, indices: np.ndarray, ce: float,
                 l0: float, ld: float, grad_norm: float):
        self.iteration = iteration
        self.indices = np.asarray(indices)
        self.ce = ce
        self.l0 = l0
        self.ld = ld
        self.grad_norm = grad_norm
        super().__init__(
            f"non-finite loss at iteration {iteration}: "
            f"ce={ce} l0={l0} ld={ld} grad_norm={grad_norm}"
        )

    def diagnostics(self) -> str:
        idx = " ".join(str(int(i)) for i in self.indices)
        return (
            f"iteration={self.iteration}\n"
            f"ce={self.ce!r}\nl0={self.l0!r}\nld={self.ld!r}\n"
            f"grad_norm={self.grad_norm!r}\n"
            f"batch_indices={idx}\n"
        )


def sample_batch(n: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform batch indices without replacement; batch_size == n gives
    the full set shuffled. Oversized requests fall back to sampling
    with replacement (warned once per call site)."""
    if n < 1:
        raise ValueError("cannot sample from an empty training set")
    if batch_size > n:
        warnings.warn(
            f"batch_size {batch_size} exceeds training set size {n}; "
            "sampling with replacement",
            stacklevel=2,
        )
        return rng.integers(0, n, size=batch_size, dtype=np.int64)
    return rng.permutation(n)[:batch_size].astype(np.int64)


def _partition_tags(partition: SubClassPartition, sample_ids: np.ndarray) -> np.ndarray:
    mapping = partition.tags()
    tags = np.empty((len(sample_ids), 2), dtype=np.int64)
    for row, sid in enumerate(sample_ids):
        key = int(sid)
        if key not in mapping:
            raise ValueError(f"partition does not cover sample {key}")
        tags[row] = mapping[key]
    return tags


def train(
    inputs: np.ndarray,
    labels: np.ndarray,
    partition: SubClassPartition | None,
    spec: NetworkSpec,
    cfg: TrainConfig,
    sample_ids: np.ndarray | None = None,
) -> tuple[ModelParams, TrainLog]:
    """Run the joint loop and return final parameters plus the log.

    `inputs` is (n, input_dim) with 1-based `labels`. `partition` maps
    sample ids (defaulting to row positions) to (class, subclass) tags;
    it may be None only when dmem_weight == 0. Batch order comes from
    the `batch` stream of cfg.seed; the network is drawn from
    spec.init_seed, so the pair (spec, cfg) pins the whole run.
    """
    cfg.validate()
    spec.validate()
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if inputs.ndim != 2 or len(inputs) != len(labels):
        raise ValueError("inputs must be (n, d) with one label per row")
    n = len(inputs)
    if n == 0:
        raise ValueError("empty training set")
    if inputs.shape[1] != spec.input_dim:
        raise ValueError(f"input dim {inputs.shape[1]} != spec {spec.input_dim}")

    use_dmem = cfg.dmem_weight > 0.0
    tags = None
    if use_dmem:
        if partition is None:
            raise ValueError("dmem_weight > 0 requires a sub-class partition")
        ids = np.arange(n) if sample_ids is None else np.asarray(sample_ids)
        tags = _partition_tags(partition, ids)
        if not np.array_equal(tags[:, 0], labels):
            raise ValueError("partition class ids disagree with training labels")

    rng = rng_from_seed(derive_seed(cfg.seed, "batch"))
    params = net.init(spec)
    log = TrainLog()
    started = time.perf_counter()

    for it in range(1, cfg.iterations + 1):
        idx = sample_batch(n, cfg.batch_size, rng)
        trace = net.forward(params, inputs[idx])
        ce, dlogits = net.softmax_ce_batch(trace.logits, labels[idx])

        if use_dmem:
            report = loss_gradients(
                FeatureBatch(trace.features, tags[idx]), cfg.loss_params
            )
            l0, ld = report.l0, report.ld
            dfeatures = cfg.dmem_weight * report.grads
            total = ce + cfg.dmem_weight * report.total
        else:
            l0 = ld = 0.0
            dfeatures = None
            total = ce

        grads = net.backward(params, trace, dfeatures, dlogits)
        grad_norm = net.grad_norm(grads)
        if not (np.isfinite(total) and np.isfinite(grad_norm)):
            raise NonFiniteLossError(it, idx, ce, l0, ld, grad_norm)
        params = net.sgd_step(params, grads, cfg.lr)

        if it % cfg.log_every == 0 or it == cfg.iterations:
            wall = 0
            if cfg.wall_clock:
                wall = int((time.perf_counter() - started) * 1000.0)
            log.append(LogRow(it, ce, l0, ld, total, grad_norm, wall))

    return params, log
