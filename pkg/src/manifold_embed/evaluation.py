"""Classifier scoring: confusion matrix, overall/average accuracy,
Cohen's kappa, McNemar pairing, and PPM classification maps.

Conventions: class ids are 1-based, confusion rows are true classes and
columns are predictions, average accuracy is the mean per-class recall
over classes that actually occur, and kappa uses marginal-product
expected agreement. The McNemar statistic is (f_ij - f_ji)/sqrt(f_ij +
f_ji) over disagreeing pairs, 0 when both counts are zero, positive
when the first method wins, significant at |statistic| > 1.96.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from manifold_embed.dataset import HyperCube

SIGNIFICANCE_THRESHOLD = 1.96

_BASE_PALETTE: tuple[tuple[int, int, int], ...] = (
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 190),
    (0, 128, 128),
    (170, 110, 40),
)


@dataclass(frozen=True)
class Metrics:
    oa: float
    aa: float
    kappa: float
    per_class: np.ndarray  # recall per class id (index 0 = class 1)
    confusion: np.ndarray  # rows true, cols predicted


@dataclass(frozen=True)
class McNemarResult:
    f_ij: int  # correct by method i, wrong by method j
    f_ji: int
    statistic: float
    significant: bool


def confusion_matrix(preds: np.ndarray, labels: np.ndarray,
                     num_classes: int | None = None) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError("preds and labels must be equal-length vectors")
    if len(preds) == 0:
        raise ValueError("cannot score an empty prediction set")
    if labels.min() < 1 or preds.min() < 1:
        raise ValueError("class ids must be 1-based")
    size = int(max(labels.max(), preds.max()))
    if num_classes is not None:
        if num_classes < size:
            raise ValueError(f"num_classes {num_classes} below max id {size}")
        size = num_classes
    out = np.zeros((size, size), dtype=np.int64)
    np.add.at(out, (labels - 1, preds - 1), 1)
    return out


def metrics_from_confusion(confusion: np.ndarray) -> Metrics:
    confusion = np.asarray(confusion, dtype=np.int64)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise ValueError("confusion matrix must be square")
    total = int(confusion.sum())
    if total == 0:
        raise ValueError("empty confusion matrix")
    row = confusion.sum(axis=1)
    col = confusion.sum(axis=0)
    diag = np.diag(confusion)

    oa = float(diag.sum() / total)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(row > 0, diag / np.maximum(row, 1), np.nan)
    present = row > 0
    aa = float(per_class[present].mean())

    p_o = oa
    p_e = float((row * col).sum() / (total * total))
    if p_e == 1.0:
        kappa = 1.0 if p_o == 1.0 else 0.0
    else:
        kappa = (p_o - p_e) / (1.0 - p_e)
    return Metrics(oa=oa, aa=aa, kappa=float(kappa),
                   per_class=per_class, confusion=confusion)


def metrics(preds: np.ndarray, labels: np.ndarray,
            num_classes: int | None = None) -> Metrics:
    return metrics_from_confusion(confusion_matrix(preds, labels, num_classes))


def mcnemar_counts(f_ij: int, f_ji: int) -> McNemarResult:
    if f_ij < 0 or f_ji < 0:
        raise ValueError("disagreement counts must be non-negative")
    denom = f_ij + f_ji
    if denom == 0:
        return McNemarResult(f_ij, f_ji, 0.0, False)
    stat = (f_ij - f_ji) / float(np.sqrt(denom))
    return McNemarResult(f_ij, f_ji, float(stat),
                         abs(stat) > SIGNIFICANCE_THRESHOLD)


def mcnemar(preds_i: np.ndarray, preds_j: np.ndarray,
            labels: np.ndarray) -> McNemarResult:
    preds_i = np.asarray(preds_i, dtype=np.int64)
    preds_j = np.asarray(preds_j, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if not (preds_i.shape == preds_j.shape == labels.shape):
        raise ValueError("prediction and label vectors must align")
    hit_i = preds_i == labels
    hit_j = preds_j == labels
    f_ij = int(np.count_nonzero(hit_i & ~hit_j))
    f_ji = int(np.count_nonzero(~hit_i & hit_j))
    return mcnemar_counts(f_ij, f_ji)


def metrics_csv(m: Metrics) -> str:
    lines = ["metric,value", f"oa,{m.oa!r}", f"aa,{m.aa!r}", f"kappa,{m.kappa!r}"]
    for cid, recall in enumerate(m.per_class, start=1):
        value = "nan" if np.isnan(recall) else repr(float(recall))
        lines.append(f"recall_{cid},{value}")
    return "\n".join(lines) + "\n"


def metrics_table(m: Metrics) -> str:
    lines = [
        f"overall accuracy  {m.oa:.4f}",
        f"average accuracy  {m.aa:.4f}",
        f"kappa             {m.kappa:.4f}",
    ]
    for cid, recall in enumerate(m.per_class, start=1):
        shown = "  n/a" if np.isnan(recall) else f"{recall:.4f}"
        lines.append(f"class {cid:2d} recall   {shown}")
    return "\n".join(lines)


def default_palette(num_classes: int) -> list[tuple[int, int, int]]:
    """Deterministic distinct colors; a fixed table first, then evenly
    rotated hues for anything beyond it."""
    colors = list(_BASE_PALETTE[:num_classes])
    for i in range(len(colors), num_classes):
        hue = (i * 0.6180339887498949) % 1.0
        r, g, b = colorsys.hsv_to_rgb(hue, 0.75, 0.95)
        colors.append((int(round(r * 255)), int(round(g * 255)), int(round(b * 255))))
    return colors


def load_palette(path) -> list[tuple[int, int, int]]:
    """One `R G B` line per class, values 0..255."""
    colors = []
    for ln, raw in enumerate(open(path, encoding="utf-8"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{ln}: expected three components, got {line!r}")
        rgb = tuple(int(p) for p in parts)
        if any(not 0 <= v <= 255 for v in rgb):
            raise ValueError(f"{path}:{ln}: components must be 0..255")
        colors.append(rgb)
    if not colors:
        raise ValueError(f"{path}: no palette entries")
    return colors


def classification_map(cube: HyperCube, preds: np.ndarray,
                       palette: list[tuple[int, int, int]]) -> bytes:
    """Binary PPM (P6) render; labelled pixels take their predicted
    class color in the row-major order of labelled positions, unlabeled
    pixels stay black."""
    preds = np.asarray(preds, dtype=np.int64)
    positions = np.argwhere(cube.labels > 0)
    if len(preds) != len(positions):
        raise ValueError(
            f"{len(preds)} predictions for {len(positions)} labelled pixels"
        )
    if len(preds) and (preds.min() < 1):
        raise ValueError("class ids must be 1-based")
    max_id = int(preds.max()) if len(preds) else 0
    if max_id > len(palette):
        raise ValueError(f"palette has {len(palette)} colors, need {max_id}")
    image = np.zeros((cube.height, cube.width, 3), dtype=np.uint8)
    lut = np.asarray(palette, dtype=np.uint8)
    image[positions[:, 0], positions[:, 1]] = lut[preds - 1]
    header = f"P6\n{cube.width} {cube.height}\n255\n".encode()
    return header + image.tobytes()


def adjusted_rand_index(labels_a: np.ndarray, labels_b: np.ndarray) -> float:
    from sklearn.metrics import adjusted_rand_score

    return float(adjusted_rand_score(labels_a, labels_b))
