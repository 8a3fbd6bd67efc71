"""Labelled data cubes, patch extraction, splits, and synthetic benchmarks.

Cube file layout (little-endian): magic ``HSIC``, u32 version=1, u32 H,
u32 W, u32 C, u32 num_classes, then H*W*C float32 reflectance values in
row-major (row, col, band) order, then H*W uint16 labels row-major.
Label 0 means unlabeled; class ids run 1..num_classes. An optional
plain-text sidecar ``<name>.classes`` maps label id to class name, one
name per line.

Patches are square spatial windows around labelled pixels with
mirror padding at image borders (edge pixel included, i.e. numpy
``symmetric`` mode), so border statistics stay representative of the
local spectra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from manifold_embed.seeding import rng_from_seed

_MAGIC = b"HSIC"
_VERSION = 1
_HEADER_BYTES = 4 + 5 * 4

# Internal geometry constants for synthetic manifolds. Subcluster
# segments fill this fraction of their angular/parameter slot; the rest
# is the planted gap that geodesic clustering must detect.
_SEGMENT_FILL = 0.6
_CLASS_CENTER_SPREAD = 1.0
_ARC_RADIUS = 1.0
_ROLL_SCALE = 0.25
_ROLL_T0 = 1.5 * math.pi
_ROLL_T1 = 4.5 * math.pi
_ROLL_HEIGHT = 1.0


class CubeFormatError(ValueError):
    """Raised for malformed cube files or invalid cube contents."""


class SplitError(ValueError):
    """Raised when a split spec cannot be satisfied by the class histogram."""


@dataclass(frozen=True)
class HyperCube:
    """A labelled H x W x C data volume with per-pixel class labels."""

    values: np.ndarray  # (H, W, C) float32
    labels: np.ndarray  # (H, W) uint16, 0 = unlabeled
    num_classes: int
    class_names: tuple[str, ...] | None = None

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    def label_histogram(self) -> dict[int, int]:
        """Counts per class id, unlabeled pixels excluded."""
        ids, counts = np.unique(self.labels[self.labels > 0], return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    def validate(self) -> None:
        if self.values.ndim != 3:
            raise CubeFormatError(f"values must be 3-d, got shape {self.values.shape}")
        if self.labels.shape != self.values.shape[:2]:
            raise CubeFormatError(
                f"labels shape {self.labels.shape} does not match image "
                f"plane {self.values.shape[:2]}"
            )
        if min(self.values.shape) < 1:
            raise CubeFormatError(f"degenerate cube shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise CubeFormatError("NaN payload: cube values contain NaN or Inf")
        if self.num_classes < 1:
            raise CubeFormatError("num_classes must be >= 1")
        max_label = int(self.labels.max(initial=0))
        if max_label > self.num_classes:
            raise CubeFormatError(
                f"label {max_label} exceeds declared class count {self.num_classes}"
            )


@dataclass(frozen=True)
class Patch:
    """One spatial-spectral window centered on a labelled pixel."""

    center_row: int
    center_col: int
    tensor: np.ndarray  # (w, w, C) float32
    label: int


@dataclass(frozen=True)
class PatchSet:
    """All patches of a cube, stored as dense arrays in row-major pixel order."""

    tensors: np.ndarray  # (n, w, w, C) float32
    labels: np.ndarray  # (n,) int64, class ids 1..num_classes
    centers: np.ndarray  # (n, 2) int32, (row, col)

    def __len__(self) -> int:
        return self.tensors.shape[0]

    def __getitem__(self, i: int) -> Patch:
        return Patch(
            center_row=int(self.centers[i, 0]),
            center_col=int(self.centers[i, 1]),
            tensor=self.tensors[i],
            label=int(self.labels[i]),
        )

    @property
    def window(self) -> int:
        return self.tensors.shape[1]

    def flattened(self) -> np.ndarray:
        """Patch vectors as (n, w*w*C) float64, row-major within each patch."""
        n = self.tensors.shape[0]
        return self.tensors.reshape(n, -1).astype(np.float64)

    def subset(self, indices: np.ndarray) -> "PatchSet":
        return PatchSet(
            tensors=self.tensors[indices],
            labels=self.labels[indices],
            centers=self.centers[indices],
        )


def load_cube(path: str | Path) -> HyperCube:
    """Read and validate a cube file; loads the sidecar class names if present."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER_BYTES or raw[:4] != _MAGIC:
        raise CubeFormatError(f"{path}: malformed header (bad magic or truncated)")
    header = np.frombuffer(raw[4:_HEADER_BYTES], dtype="<u4")
    version, height, width, bands, num_classes = (int(v) for v in header)
    if version != _VERSION:
        raise CubeFormatError(f"{path}: unsupported version {version}")
    if min(height, width, bands) < 1 or num_classes < 1:
        raise CubeFormatError(f"{path}: malformed header (zero dimension)")
    n_values = height * width * bands
    n_pixels = height * width
    expected = _HEADER_BYTES + 4 * n_values + 2 * n_pixels
    if len(raw) != expected:
        raise CubeFormatError(
            f"{path}: size mismatch, expected {expected} bytes for "
            f"H={height} W={width} C={bands}, found {len(raw)}"
        )
    values = np.frombuffer(
        raw, dtype="<f4", count=n_values, offset=_HEADER_BYTES
    ).reshape(height, width, bands)
    labels = np.frombuffer(
        raw, dtype="<u2", count=n_pixels, offset=_HEADER_BYTES + 4 * n_values
    ).reshape(height, width)

    names = None
    sidecar = path.with_suffix(".classes")
    if sidecar.exists():
        lines = [ln.strip() for ln in sidecar.read_text().splitlines() if ln.strip()]
        names = tuple(lines)

    cube = HyperCube(
        values=values.copy(),
        labels=labels.copy(),
        num_classes=num_classes,
        class_names=names,
    )
    cube.validate()
    return cube


def save_cube(cube: HyperCube, path: str | Path) -> None:
    """Write a cube file; round-trips byte-identically through load_cube."""
    cube.validate()
    path = Path(path)
    header = np.array(
        [_VERSION, cube.height, cube.width, cube.bands, cube.num_classes],
        dtype="<u4",
    )
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(cube.values, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(cube.labels, dtype="<u2").tobytes())
    if cube.class_names is not None:
        sidecar = path.with_suffix(".classes")
        sidecar.write_text("".join(f"{n}\n" for n in cube.class_names))


def band_statistics(cube: HyperCube) -> tuple[np.ndarray, np.ndarray]:
    """Per-band mean and std over labelled pixels only (float64).

    Unlabeled pixels are background and would contaminate the statistics.
    Zero-variance bands get std 1 so normalization stays finite.
    """
    mask = cube.labels > 0
    if not mask.any():
        raise CubeFormatError("cube has no labelled pixels")
    spectra = cube.values[mask].astype(np.float64)
    means = spectra.mean(axis=0)
    stds = spectra.std(axis=0)
    stds[stds == 0.0] = 1.0
    return means, stds


def normalize_cube(cube: HyperCube, means: np.ndarray, stds: np.ndarray) -> HyperCube:
    """Scale every pixel (labelled or not) to the given per-band statistics."""
    values = ((cube.values.astype(np.float64) - means) / stds).astype(np.float32)
    return HyperCube(
        values=values,
        labels=cube.labels,
        num_classes=cube.num_classes,
        class_names=cube.class_names,
    )


def extract_patches(cube: HyperCube, window: int) -> PatchSet:
    """One patch per labelled pixel, row-major by center pixel.

    Borders are mirror-padded (edge pixel included), so a corner pixel's
    window repeats its own row/column reflections.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    pad = window // 2
    padded = np.pad(cube.values, ((pad, pad), (pad, pad), (0, 0)), mode="symmetric")
    centers = np.argwhere(cube.labels > 0)  # row-major order
    n = centers.shape[0]
    tensors = np.empty((n, window, window, cube.bands), dtype=np.float32)
    for i, (r, c) in enumerate(centers):
        tensors[i] = padded[r : r + window, c : c + window, :]
    labels = cube.labels[centers[:, 0], centers[:, 1]].astype(np.int64)
    return PatchSet(tensors=tensors, labels=labels, centers=centers.astype(np.int32))


@dataclass(frozen=True)
class SplitSpec:
    """Stratified train/test split: fixed count or fraction per class.

    Fraction mode takes round(fraction * n_class) training samples
    (halves round up), never fewer than one, so tiny classes are kept.
    """

    mode: str  # "count" or "fraction"
    amount: float
    seed: int

    def validate(self) -> None:
        if self.mode not in ("count", "fraction"):
            raise SplitError(f"unknown split mode {self.mode!r}")
        if self.mode == "count":
            if self.amount < 1 or self.amount != int(self.amount):
                raise SplitError(f"count mode needs a positive integer, got {self.amount}")
        elif not 0.0 < self.amount <= 1.0:
            raise SplitError(f"fraction must be in (0, 1], got {self.amount}")


def train_count(spec: SplitSpec, class_size: int) -> int:
    """Training samples drawn from a class of the given size."""
    if spec.mode == "count":
        return int(spec.amount)
    return max(1, int(math.floor(spec.amount * class_size + 0.5)))


def split_indices(
    labels: np.ndarray, spec: SplitSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic stratified split; returns sorted (train, test) indices."""
    spec.validate()
    labels = np.asarray(labels)
    rng = rng_from_seed(spec.seed)
    train_parts: list[np.ndarray] = []
    test_parts: list[np.ndarray] = []
    for class_id in np.unique(labels):
        idx = np.flatnonzero(labels == class_id)
        n_train = train_count(spec, len(idx))
        if n_train > len(idx):
            raise SplitError(
                f"class {int(class_id)} has {len(idx)} samples, "
                f"cannot take {n_train} for training"
            )
        perm = rng.permutation(len(idx))
        train_parts.append(idx[perm[:n_train]])
        test_parts.append(idx[perm[n_train:]])
    train = np.sort(np.concatenate(train_parts))
    test = np.sort(np.concatenate(test_parts)) if test_parts else np.empty(0, np.int64)
    return train.astype(np.int64), test.astype(np.int64)


def split(patches: PatchSet, spec: SplitSpec) -> tuple[PatchSet, PatchSet]:
    """Split a patch set; train and test partition the input exactly."""
    train_idx, test_idx = split_indices(patches.labels, spec)
    return patches.subset(train_idx), patches.subset(test_idx)


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted-manifold dataset: balanced classes, each a union of
    geodesically separated subclusters on a chosen manifold family."""

    num_classes: int
    subclusters_per_class: int
    samples_per_subcluster: int
    ambient_dim: int
    manifold: str  # "swiss-roll", "arc", or "gaussian-blob"
    noise_sigma: float
    seed: int

    def validate(self) -> None:
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.subclusters_per_class < 1:
            raise ValueError("subclusters_per_class must be >= 1")
        if self.samples_per_subcluster < 1:
            raise ValueError("samples_per_subcluster must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.manifold not in ("swiss-roll", "arc", "gaussian-blob"):
            raise ValueError(f"unknown manifold {self.manifold!r}")
        min_dim = {"swiss-roll": 3, "arc": 2, "gaussian-blob": 1}[self.manifold]
        if self.ambient_dim < min_dim:
            raise ValueError(
                f"{self.manifold} needs ambient_dim >= {min_dim}, got {self.ambient_dim}"
            )
        if (
            self.manifold == "gaussian-blob"
            and self.subclusters_per_class > self.ambient_dim
        ):
            raise ValueError(
                "gaussian-blob places subcluster centers on orthogonal axes; "
                f"needs ambient_dim >= subclusters_per_class ({self.subclusters_per_class})"
            )


@dataclass(frozen=True)
class SyntheticDataset:
    """Generated samples with ground-truth subcluster ids for validation."""

    samples: np.ndarray  # (n, ambient_dim) float64
    class_labels: np.ndarray  # (n,) int64, 1..num_classes
    subcluster_ids: np.ndarray  # (n,) int64, 1..subclusters_per_class within class
    spec: SyntheticSpec

    def __len__(self) -> int:
        return self.samples.shape[0]


def _orthonormal_columns(rng: np.random.Generator, dim: int, ncols: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, ncols)))
    return q


def _segment_bounds(j: int, total: int, lo: float, hi: float) -> tuple[float, float]:
    """Parameter range of segment j of `total`, centered in its slot."""
    slot = (hi - lo) / total
    margin = (1.0 - _SEGMENT_FILL) / 2.0
    return lo + (j + margin) * slot, lo + (j + 1 - margin) * slot


def synthesize(spec: SyntheticSpec) -> SyntheticDataset:
    """Generate the planted dataset; fully determined by spec.seed.

    Subcluster segments fill 60% of their parameter slot, so the planted
    gaps are several times the expected nearest-neighbor spacing at the
    default 100 samples per subcluster.
    """
    spec.validate()
    rng = rng_from_seed(spec.seed)
    dim = spec.ambient_dim
    q = spec.samples_per_subcluster
    m = spec.subclusters_per_class

    sample_blocks: list[np.ndarray] = []
    class_blocks: list[np.ndarray] = []
    sub_blocks: list[np.ndarray] = []
    for class_id in range(1, spec.num_classes + 1):
        direction = rng.standard_normal(dim)
        center = direction / np.linalg.norm(direction) * _CLASS_CENTER_SPREAD
        if spec.manifold == "arc":
            basis = _orthonormal_columns(rng, dim, 2)
            block = _arc_class(rng, center, basis, m, q, spec.noise_sigma, dim)
        elif spec.manifold == "swiss-roll":
            basis = _orthonormal_columns(rng, dim, 3)
            block = _roll_class(rng, center, basis, m, q, spec.noise_sigma, dim)
        else:
            basis = _orthonormal_columns(rng, dim, m)
            block = _blob_class(rng, center, basis, m, q, spec.noise_sigma, dim)
        sample_blocks.append(block)
        class_blocks.append(np.full(m * q, class_id, dtype=np.int64))
        sub_blocks.append(np.repeat(np.arange(1, m + 1, dtype=np.int64), q))

    return SyntheticDataset(
        samples=np.concatenate(sample_blocks),
        class_labels=np.concatenate(class_blocks),
        subcluster_ids=np.concatenate(sub_blocks),
        spec=spec,
    )


def _arc_class(rng, center, basis, m, q, sigma, dim):
    rows = []
    for j in range(m):
        lo, hi = _segment_bounds(j, m, 0.0, 2.0 * math.pi)
        theta = rng.uniform(lo, hi, size=q)
        plane = np.stack([np.cos(theta), np.sin(theta)], axis=1) * _ARC_RADIUS
        pts = center + plane @ basis.T
        if sigma > 0:
            pts = pts + sigma * rng.standard_normal((q, dim))
        rows.append(pts)
    return np.concatenate(rows)


def _roll_class(rng, center, basis, m, q, sigma, dim):
    rows = []
    for j in range(m):
        lo, hi = _segment_bounds(j, m, _ROLL_T0, _ROLL_T1)
        t = rng.uniform(lo, hi, size=q)
        y = rng.uniform(0.0, _ROLL_HEIGHT, size=q)
        local = np.stack(
            [_ROLL_SCALE * t * np.cos(t), y, _ROLL_SCALE * t * np.sin(t)], axis=1
        )
        pts = center + local @ basis.T
        if sigma > 0:
            pts = pts + sigma * rng.standard_normal((q, dim))
        rows.append(pts)
    return np.concatenate(rows)


def _blob_class(rng, center, basis, m, q, sigma, dim):
    separation = max(1.0, 8.0 * sigma)
    rows = []
    for j in range(m):
        sub_center = center + separation * basis[:, j]
        pts = np.tile(sub_center, (q, 1))
        if sigma > 0:
            pts = pts + sigma * rng.standard_normal((q, dim))
        rows.append(pts)
    return np.concatenate(rows)
