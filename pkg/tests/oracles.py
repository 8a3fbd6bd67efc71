"""Independent reference implementations used to cross-check the
package. Everything here is deliberately written with different
algorithms or data layouts than the code under test: Floyd-Warshall
instead of Dijkstra, member-list linkage recomputation instead of
incremental matrix updates, brute-force partition enumeration, plain
Python accumulation instead of BLAS, and central finite differences."""

from __future__ import annotations

import math

import numpy as np


# ---------------------------------------------------------------- graphs


def graph_adjacency(graph) -> np.ndarray:
    """Dense edge-weight matrix of a ClassGraph (inf = no edge)."""
    n = graph.size
    adj = np.full((n, n), np.inf)
    np.fill_diagonal(adj, 0.0)
    for i in range(n):
        for j, w in zip(graph.neighbors[i], graph.weights[i]):
            adj[i, int(j)] = w
    return adj


def floyd_warshall(adjacency: np.ndarray) -> np.ndarray:
    dist = np.array(adjacency, dtype=np.float64, copy=True)
    n = dist.shape[0]
    for mid in range(n):
        np.minimum(dist, dist[:, mid : mid + 1] + dist[mid : mid + 1, :], out=dist)
    return dist


def components_from_finite(finite: np.ndarray) -> list[list[int]]:
    """Connected components via breadth-first search over a boolean
    reachability matrix."""
    n = finite.shape[0]
    seen = [False] * n
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        queue = [start]
        seen[start] = True
        members = []
        while queue:
            u = queue.pop()
            members.append(u)
            for v in range(n):
                if not seen[v] and finite[u, v]:
                    seen[v] = True
                    queue.append(v)
        comps.append(sorted(members))
    return comps


# ------------------------------------------------------------ clustering


def naive_cluster(geodesic: np.ndarray, k: int, euclidean: np.ndarray | None = None):
    """Reference agglomeration: same contract as cluster_subclasses but
    recomputes every linkage value from member lists each round.

    Returns (labels, num_subclasses, component_count, fallback_merged,
    undersized)."""
    geodesic = np.asarray(geodesic, dtype=np.float64)
    n = geodesic.shape[0]
    comps = components_from_finite(np.isfinite(geodesic))
    n_comp = len(comps)

    if n < k:
        return np.arange(1, n + 1, dtype=np.int64), n, n_comp, False, True

    clusters: list[list[int]] = [[i] for i in range(n)]

    def complete_linkage(a: list[int], b: list[int]) -> float:
        return max(geodesic[x, y] for x in a for y in b)

    def single_euclidean(a: list[int], b: list[int]) -> float:
        return min(euclidean[x, y] for x in a for y in b)

    def best_pair(linkage, finite_only: bool):
        chosen = None
        chosen_rank = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                d = linkage(clusters[i], clusters[j])
                if finite_only and not math.isfinite(d):
                    continue
                lo, hi = clusters[i][0], clusters[j][0]
                rank = (d, min(lo, hi), max(lo, hi))
                if chosen_rank is None or rank < chosen_rank:
                    chosen_rank = rank
                    chosen = (i, j)
        return chosen

    def merge(i: int, j: int) -> None:
        clusters[i] = sorted(clusters[i] + clusters[j])
        del clusters[j]

    while len(clusters) > max(k, n_comp):
        pair = best_pair(complete_linkage, finite_only=True)
        if pair is None:
            break
        merge(*pair)

    fallback = False
    while len(clusters) > k:
        if euclidean is None:
            raise ValueError("need Euclidean distances to merge across components")
        merge(*best_pair(single_euclidean, finite_only=False))
        fallback = True

    labels = np.zeros(n, dtype=np.int64)
    for rank, c in enumerate(sorted(clusters, key=lambda c: c[0]), start=1):
        labels[c] = rank
    return labels, len(clusters), n_comp, fallback, False


def partitions_up_to(n: int, k: int):
    """All set partitions of range(n) into at most k blocks."""
    blocks: list[list[int]] = []

    def rec(i: int):
        if i == n:
            yield [list(b) for b in blocks]
            return
        for b in blocks:
            b.append(i)
            yield from rec(i + 1)
            b.pop()
        if len(blocks) < k:
            blocks.append([i])
            yield from rec(i + 1)
            blocks.pop()

    yield from rec(0)


def partition_objective(geodesic: np.ndarray, blocks: list[list[int]]) -> float:
    """Largest within-block pairwise distance (0 for singletons)."""
    worst = 0.0
    for block in blocks:
        for ai in range(len(block)):
            for bi in range(ai + 1, len(block)):
                worst = max(worst, float(geodesic[block[ai], block[bi]]))
    return worst


def brute_force_minimax(geodesic: np.ndarray, k: int) -> float:
    """Optimal minimax-diameter objective over all partitions into at
    most k blocks, by exhaustive enumeration."""
    n = geodesic.shape[0]
    best = math.inf
    for blocks in partitions_up_to(n, k):
        best = min(best, partition_objective(geodesic, blocks))
        if best == 0.0:
            break
    return best


def labels_to_blocks(labels: np.ndarray) -> list[list[int]]:
    out: dict[int, list[int]] = {}
    for idx, lab in enumerate(labels):
        out.setdefault(int(lab), []).append(idx)
    return [out[key] for key in sorted(out)]


# --------------------------------------------------------------- losses


def hausdorff_oracle(a: np.ndarray, b: np.ndarray) -> float:
    """Directed Hausdorff with squared Euclidean point distance, as two
    plain loops."""
    worst = -math.inf
    for pa in a:
        nearest = math.inf
        for pb in b:
            nearest = min(nearest, float(((pa - pb) ** 2).sum()))
        worst = max(worst, nearest)
    return worst


def compactness_oracle(features: np.ndarray, tags: np.ndarray) -> float:
    """Double sum of squared distances over ordered pairs inside each
    (class, subclass) group."""
    total = 0.0
    keys = {tuple(t) for t in tags.tolist()}
    for key in keys:
        members = [i for i, t in enumerate(tags.tolist()) if tuple(t) == key]
        for o in members:
            for i in members:
                total += float(((features[o] - features[i]) ** 2).sum())
    return total


# -------------------------------------------------------------- network


def forward_oracle(params, x: np.ndarray):
    """Layer-by-layer forward pass with explicit Python accumulation
    (no BLAS); returns (features, logits)."""
    feats_out = []
    logits_out = []
    for row in np.asarray(x, dtype=np.float64):
        act = [float(v) for v in row]

        def affine(values, w, b):
            return [
                sum(values[i] * float(w[i, o]) for i in range(w.shape[0])) + float(b[o])
                for o in range(w.shape[1])
            ]

        for w, b in params.layers[:-1]:
            act = [v if v > 0.0 else 0.0 for v in affine(act, w, b)]
        feats = affine(act, *params.layers[-1])
        logits = affine(feats, *params.head)
        feats_out.append(feats)
        logits_out.append(logits)
    return np.array(feats_out), np.array(logits_out)


# --------------------------------------------------- finite differences

FD_STEP = 1e-5
FD_SCALE_FLOOR = 1e-3  # relative error uses max(|analytic|, |numeric|, floor)


def central_diff(fn, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite-difference gradient of a scalar function; the
    input array is perturbed in place and restored."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fn(x)
        flat[i] = orig - h
        lo = fn(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray,
                floor: float = FD_SCALE_FLOOR) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / scale).max())
