"""Small from-scratch feature extractor with a linear softmax head.

Architecture: flattened patch -> hidden linear+ReLU layers -> linear
feature layer (no activation, this is the embedding) -> linear class
head. Everything runs in float64 so finite-difference gradient checks
have headroom; only the on-disk cube format is 32-bit.

Checkpoint layout: magic ``DMEMCKPT``, u32 version=1, u32 byte length of
a key=value spec block (utf-8), the block, then every parameter tensor
as little-endian float64 in declaration order (hidden layers first, each
weight then bias, then feature layer, then head). Save/load round-trips
bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from manifold_embed.seeding import rng_from_seed

_CKPT_MAGIC = b"DMEMCKPT"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    num_classes: int
    hidden_dims: tuple[int, ...] = (256, 128)
    feature_dim: int = 64
    activation: str = "relu"
    init_seed: int = 0

    def validate(self) -> None:
        dims = (self.input_dim, self.feature_dim, self.num_classes, *self.hidden_dims)
        if any(d < 1 for d in dims):
            raise ValueError(f"all dimensions must be positive: {self}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of every linear layer, head included."""
        chain = [self.input_dim, *self.hidden_dims, self.feature_dim]
        dims = list(zip(chain[:-1], chain[1:]))
        dims.append((self.feature_dim, self.num_classes))
        return dims


@dataclass
class ModelParams:
    """Parameter container; gradients reuse the same shape."""

    layers: list[tuple[np.ndarray, np.ndarray]]  # hidden* + feature layer
    head: tuple[np.ndarray, np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        """All tensors in declaration order (W, b per layer, head last)."""
        out: list[np.ndarray] = []
        for w, b in self.layers:
            out.extend((w, b))
        out.extend(self.head)
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(
            layers=[(w.copy(), b.copy()) for w, b in self.layers],
            head=(self.head[0].copy(), self.head[1].copy()),
        )

    def count(self) -> int:
        return sum(a.size for a in self.arrays())


@dataclass
class ForwardTrace:
    """Per-layer state retained for backprop."""

    inputs: np.ndarray
    pre_activations: list[np.ndarray]  # hidden layers only
    activations: list[np.ndarray]  # hidden layers only
    features: np.ndarray  # (n, p)
    logits: np.ndarray  # (n, num_classes)


def init(spec: NetworkSpec) -> ModelParams:
    """Scaled-uniform fan-in init (bound sqrt(6/(fan_in+fan_out))),
    zero biases; deterministic given spec.init_seed."""
    spec.validate()
    rng = rng_from_seed(spec.init_seed)
    tensors = []
    for fan_in, fan_out in spec.layer_dims():
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        tensors.append((w, np.zeros(fan_out)))
    return ModelParams(layers=tensors[:-1], head=tensors[-1])


def forward(params: ModelParams, x: np.ndarray) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"inputs must be (n, input_dim), got shape {x.shape}")
    if x.shape[1] != params.layers[0][0].shape[0]:
        raise ValueError(
            f"input dim {x.shape[1]} does not match first layer "
            f"{params.layers[0][0].shape[0]}"
        )
    pre: list[np.ndarray] = []
    act: list[np.ndarray] = []
    a = x
    for w, b in params.layers[:-1]:
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        act.append(a)
    w_f, b_f = params.layers[-1]
    features = a @ w_f + b_f
    w_h, b_h = params.head
    logits = features @ w_h + b_h
    return ForwardTrace(inputs=x, pre_activations=pre, activations=act,
                        features=features, logits=logits)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_ce(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of one sample; label is 1-based. Returns
    (loss, d loss / d logits) via the stable log-sum-exp form."""
    logits = np.asarray(logits, dtype=np.float64)
    n_classes = logits.shape[-1]
    if not 1 <= label <= n_classes:
        raise ValueError(f"label {label} outside 1..{n_classes}")
    m = logits.max()
    lse = m + math.log(np.exp(logits - m).sum())
    loss = lse - logits[label - 1]
    dlogits = softmax(logits)
    dlogits[label - 1] -= 1.0
    return float(loss), dlogits


def softmax_ce_batch(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over a batch (labels 1-based); dlogits is the
    gradient of the mean, i.e. (softmax - onehot) / n."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    if labels.min(initial=1) < 1 or labels.max(initial=1) > logits.shape[1]:
        raise ValueError("labels outside 1..num_classes")
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    picked = logits[np.arange(n), labels - 1]
    loss = float((lse - picked).mean())
    dlogits = softmax(logits)
    dlogits[np.arange(n), labels - 1] -= 1.0
    return loss, dlogits / n


def backward(
    params: ModelParams,
    trace: ForwardTrace,
    dfeatures: np.ndarray | None,
    dlogits: np.ndarray,
) -> ModelParams:
    """Exact parameter gradients for a scalar whose feature- and
    logit-space gradients are given. `dfeatures` injects embedding-loss
    gradients directly at the feature layer; pass None for zero."""
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.shape != trace.logits.shape:
        raise ValueError(f"dlogits shape {dlogits.shape} != {trace.logits.shape}")
    w_h, _ = params.head
    g_head = (trace.features.T @ dlogits, dlogits.sum(axis=0))

    dfeat = dlogits @ w_h.T
    if dfeatures is not None:
        dfeatures = np.asarray(dfeatures, dtype=np.float64)
        if dfeatures.shape != trace.features.shape:
            raise ValueError(
                f"dfeatures shape {dfeatures.shape} != {trace.features.shape}"
            )
        dfeat = dfeat + dfeatures

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.layers)
    a_prev = trace.activations[-1] if trace.activations else trace.inputs
    w_f, _ = params.layers[-1]
    grads[-1] = (a_prev.T @ dfeat, dfeat.sum(axis=0))
    da = dfeat @ w_f.T
    for li in range(len(params.layers) - 2, -1, -1):
        dz = da * (trace.pre_activations[li] > 0.0)
        a_prev = trace.activations[li - 1] if li > 0 else trace.inputs
        grads[li] = (a_prev.T @ dz, dz.sum(axis=0))
        da = dz @ params.layers[li][0].T
    return ModelParams(layers=grads, head=g_head)


def sgd_step(params: ModelParams, grads: ModelParams, lr: float) -> ModelParams:
    """One plain SGD update; returns new parameters."""
    if lr < 0:
        raise ValueError(f"lr must be non-negative, got {lr}")
    layers = [
        (w - lr * gw, b - lr * gb)
        for (w, b), (gw, gb) in zip(params.layers, grads.layers)
    ]
    head = (params.head[0] - lr * grads.head[0], params.head[1] - lr * grads.head[1])
    return ModelParams(layers=layers, head=head)


def grad_norm(grads: ModelParams) -> float:
    return math.sqrt(sum(float((a**2).sum()) for a in grads.arrays()))


def predict(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Predicted 1-based class ids for a batch of flattened patches."""
    logits = forward(params, x).logits
    return logits.argmax(axis=1).astype(np.int64) + 1


def _spec_block(spec: NetworkSpec) -> str:
    return (
        f"input_dim={spec.input_dim}\n"
        f"hidden_dims={','.join(str(d) for d in spec.hidden_dims)}\n"
        f"feature_dim={spec.feature_dim}\n"
        f"num_classes={spec.num_classes}\n"
        f"activation={spec.activation}\n"
        f"init_seed={spec.init_seed}\n"
    )


def _parse_spec_block(text: str) -> NetworkSpec:
    kv = dict(line.split("=", 1) for line in text.splitlines() if line)
    hidden = tuple(int(t) for t in kv["hidden_dims"].split(",") if t)
    return NetworkSpec(
        input_dim=int(kv["input_dim"]),
        num_classes=int(kv["num_classes"]),
        hidden_dims=hidden,
        feature_dim=int(kv["feature_dim"]),
        activation=kv["activation"],
        init_seed=int(kv["init_seed"]),
    )


def save_checkpoint(params: ModelParams, spec: NetworkSpec, path: str | Path) -> None:
    block = _spec_block(spec).encode()
    with Path(path).open("wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(np.array([_CKPT_VERSION, len(block)], dtype="<u4").tobytes())
        fh.write(block)
        for a in params.arrays():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[ModelParams, NetworkSpec]:
    raw = Path(path).read_bytes()
    if raw[:8] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, block_len = np.frombuffer(raw, dtype="<u4", count=2, offset=8)
    if int(version) != _CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 16
    spec = _parse_spec_block(raw[offset : offset + int(block_len)].decode())
    spec.validate()
    offset += int(block_len)
    tensors = []
    for fan_in, fan_out in spec.layer_dims():
        w = np.frombuffer(raw, dtype="<f8", count=fan_in * fan_out, offset=offset)
        offset += fan_in * fan_out * 8
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=offset)
        offset += fan_out * 8
        tensors.append((w.reshape(fan_in, fan_out).copy(), b.copy()))
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return ModelParams(layers=tensors[:-1], head=tensors[-1]), spec
