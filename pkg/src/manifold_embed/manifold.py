"""Per-class manifold modelling: kNN graphs, geodesics, sub-class clustering.

Each class is modelled as a nonlinear manifold sampled by its training
vectors. The b-nearest-neighbor graph (union-symmetrized, Euclidean
weights) approximates the manifold, shortest-path lengths over it give
geodesic distances, and agglomerative complete-linkage clustering on the
geodesic matrix partitions the class into k geodesically compact
sub-classes (greedy minimax-diameter).

Disconnected graphs: clusters never merge across graph components while
more clusters than components remain. If the graph has more components
than k, components are merged by smallest Euclidean closest-pair
distance and the partition is flagged (`fallback_merged`).

Ties in merge candidates break on the lexicographically smallest pair of
cluster representatives (each cluster represented by its smallest sample
index), so identical inputs always produce identical partitions.
"""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_GEOD_MAGIC = b"GEOD"


@dataclass(frozen=True)
class ManifoldParams:
    k: int = 5  # sub-classes per class
    b: int = 5  # nearest neighbors per node

    def validate(self) -> None:
        if self.k < 1 or self.b < 1:
            raise ValueError(f"k and b must be >= 1, got k={self.k} b={self.b}")


@dataclass(frozen=True)
class ClassGraph:
    """Union-symmetrized kNN graph over one class's samples."""

    node_ids: np.ndarray  # (n,) int64 global sample indices
    neighbors: tuple[np.ndarray, ...]  # per node, local neighbor ids
    weights: tuple[np.ndarray, ...]  # per node, Euclidean edge weights
    b: int

    @property
    def size(self) -> int:
        return len(self.node_ids)


def pairwise_euclidean(vectors: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix, computed row-at-a-time as
    sqrt(sum((x_i - x_j)^2)) with no dot-product expansion. Exactly
    symmetric and exactly zero on the diagonal; graph weights and the
    cross-component fallback both reuse these entries, so every distance
    comparison in the pipeline sees identical floats."""
    x = np.asarray(vectors, dtype=np.float64)
    n = x.shape[0]
    dist = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        dist[i] = np.sqrt(((x - x[i]) ** 2).sum(axis=1))
    return dist


def build_class_graph(
    vectors: np.ndarray,
    b: int,
    node_ids: np.ndarray | None = None,
    dist: np.ndarray | None = None,
) -> ClassGraph:
    """kNN graph with union symmetrization.

    An edge (i, j) exists when either endpoint lists the other among its
    b nearest neighbors; the weight is their Euclidean distance. Ties in
    neighbor rank break toward the smaller sample index.
    """
    x = np.asarray(vectors, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 samples to build a graph, got {n}")
    if b < 1:
        raise ValueError(f"b must be >= 1, got {b}")
    if dist is None:
        dist = pairwise_euclidean(x)
    b_eff = min(b, n - 1)

    adjacency: list[set[int]] = [set() for _ in range(n)]
    for i in range(n):
        order = np.argsort(dist[i], kind="stable")
        picked = 0
        for j in order:
            if j == i:
                continue
            adjacency[i].add(int(j))
            adjacency[int(j)].add(i)
            picked += 1
            if picked == b_eff:
                break

    neighbors = []
    weights = []
    for i in range(n):
        nbrs = np.array(sorted(adjacency[i]), dtype=np.int64)
        neighbors.append(nbrs)
        weights.append(dist[i, nbrs].astype(np.float64))
    ids = np.arange(n, dtype=np.int64) if node_ids is None else np.asarray(node_ids, np.int64)
    return ClassGraph(node_ids=ids, neighbors=tuple(neighbors), weights=tuple(weights), b=b)


def _dijkstra(graph: ClassGraph, source: int) -> np.ndarray:
    n = graph.size
    dist = np.full(n, np.inf)
    dist[source] = 0.0
    heap = [(0.0, source)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, w in zip(graph.neighbors[u], graph.weights[u]):
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (float(nd), int(v)))
    return dist


def geodesic_matrix(graph: ClassGraph) -> np.ndarray:
    """All-pairs shortest-path matrix; inf between graph components.

    Runs Dijkstra from every source, then takes the entrywise minimum
    with the transpose so the result is exactly symmetric (forward and
    reverse traversal of a path may round differently).
    """
    n = graph.size
    out = np.empty((n, n), dtype=np.float64)
    for s in range(n):
        out[s] = _dijkstra(graph, s)
    out = np.minimum(out, out.T)
    np.fill_diagonal(out, 0.0)
    return out


def connected_components(geodesic: np.ndarray) -> np.ndarray:
    """Component id per node, derived from finite geodesic entries."""
    n = geodesic.shape[0]
    comp = np.full(n, -1, dtype=np.int64)
    next_id = 0
    for i in range(n):
        if comp[i] >= 0:
            continue
        members = np.flatnonzero(np.isfinite(geodesic[i]))
        comp[members] = next_id
        comp[i] = next_id
        next_id += 1
    return comp


@dataclass(frozen=True)
class ClusterResult:
    """Sub-class assignment for one class, with provenance flags."""

    labels: np.ndarray  # (n,) int64, sub-class ids 1..num_subclasses
    num_subclasses: int
    component_count: int
    fallback_merged: bool  # components were joined via Euclidean fallback
    undersized: bool  # fewer samples than requested sub-classes


def _pair_key(clusters: list[list[int]], i: int, j: int) -> tuple[int, int]:
    a, b = clusters[i][0], clusters[j][0]  # member lists stay sorted
    return (a, b) if a < b else (b, a)


def _best_pair(
    linkage: np.ndarray, clusters: list[list[int]], finite_only: bool
) -> tuple[int, int] | None:
    best = None
    best_rank: tuple[float, int, int] | None = None
    m = len(clusters)
    for i in range(m):
        for j in range(i + 1, m):
            d = linkage[i, j]
            if finite_only and not np.isfinite(d):
                continue
            rank = (d, *_pair_key(clusters, i, j))
            if best_rank is None or rank < best_rank:
                best_rank = rank
                best = (i, j)
    return best


def _merge(
    clusters: list[list[int]],
    complete: np.ndarray,
    single_euclid: np.ndarray | None,
    i: int,
    j: int,
) -> tuple[np.ndarray, np.ndarray | None]:
    merged = sorted(clusters[i] + clusters[j])
    complete[i, :] = np.maximum(complete[i, :], complete[j, :])
    complete[:, i] = complete[i, :]
    complete = np.delete(np.delete(complete, j, axis=0), j, axis=1)
    if single_euclid is not None:
        single_euclid[i, :] = np.minimum(single_euclid[i, :], single_euclid[j, :])
        single_euclid[:, i] = single_euclid[i, :]
        single_euclid = np.delete(np.delete(single_euclid, j, axis=0), j, axis=1)
    clusters[i] = merged
    del clusters[j]
    np.fill_diagonal(complete, np.inf)
    if single_euclid is not None:
        np.fill_diagonal(single_euclid, np.inf)
    return complete, single_euclid


def cluster_subclasses(
    geodesic: np.ndarray, k: int, euclidean: np.ndarray | None = None
) -> ClusterResult:
    """Greedy complete-linkage agglomeration on the geodesic matrix.

    Starts from singletons and repeatedly merges the two clusters with
    the smallest maximum pairwise geodesic distance, stopping at
    max(k, number of graph components). Sub-class ids are numbered by
    each cluster's smallest sample index.
    """
    geodesic = np.asarray(geodesic, dtype=np.float64)
    n = geodesic.shape[0]
    if geodesic.shape != (n, n):
        raise ValueError(f"geodesic matrix must be square, got {geodesic.shape}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")

    components = connected_components(geodesic)
    n_components = int(components.max()) + 1 if n else 0

    if n < k:
        warnings.warn(
            f"class has {n} samples but k={k}; emitting {n} singleton sub-classes",
            stacklevel=2,
        )
        return ClusterResult(
            labels=np.arange(1, n + 1, dtype=np.int64),
            num_subclasses=n,
            component_count=n_components,
            fallback_merged=False,
            undersized=True,
        )

    clusters: list[list[int]] = [[i] for i in range(n)]
    complete = geodesic.copy()
    np.fill_diagonal(complete, np.inf)
    single_euclid = None
    if euclidean is not None:
        single_euclid = np.asarray(euclidean, dtype=np.float64).copy()
        np.fill_diagonal(single_euclid, np.inf)

    stop_at = max(k, n_components)
    while len(clusters) > stop_at:
        pair = _best_pair(complete, clusters, finite_only=True)
        if pair is None:  # defensive; cannot happen while above component count
            break
        complete, single_euclid = _merge(clusters, complete, single_euclid, *pair)

    fallback = False
    if len(clusters) > k:
        if single_euclid is None:
            raise ValueError(
                f"graph has {n_components} components but k={k}; Euclidean "
                "distances are required to merge across components"
            )
        while len(clusters) > k:
            pair = _best_pair(single_euclid, clusters, finite_only=False)
            complete, single_euclid = _merge(clusters, complete, single_euclid, *pair)
            fallback = True

    order = sorted(range(len(clusters)), key=lambda c: clusters[c][0])
    labels = np.zeros(n, dtype=np.int64)
    for rank, c in enumerate(order, start=1):
        labels[clusters[c]] = rank
    return ClusterResult(
        labels=labels,
        num_subclasses=len(clusters),
        component_count=n_components,
        fallback_merged=fallback,
        undersized=False,
    )


@dataclass(frozen=True)
class ClassPartition:
    """Sub-class assignment of one class over global sample indices."""

    class_id: int
    sample_ids: np.ndarray  # (n,) int64 global indices, ascending
    subclass_ids: np.ndarray  # (n,) int64, 1..num_subclasses
    num_subclasses: int
    component_count: int = 0
    fallback_merged: bool = False
    undersized: bool = False
    subclass_diameters: np.ndarray = field(default_factory=lambda: np.empty(0))


@dataclass(frozen=True)
class SubClassPartition:
    """Assignment of every training sample to a (class, sub-class) pair."""

    k: int
    b: int
    classes: dict[int, ClassPartition]

    def tags(self) -> dict[int, tuple[int, int]]:
        """Map global sample index -> (class_id, subclass_id)."""
        out: dict[int, tuple[int, int]] = {}
        for cp in self.classes.values():
            for sid, sub in zip(cp.sample_ids, cp.subclass_ids):
                out[int(sid)] = (cp.class_id, int(sub))
        return out

    def num_samples(self) -> int:
        return sum(len(cp.sample_ids) for cp in self.classes.values())


def _subclass_diameters(geodesic: np.ndarray, labels: np.ndarray, count: int) -> np.ndarray:
    diam = np.zeros(count, dtype=np.float64)
    for sub in range(1, count + 1):
        members = np.flatnonzero(labels == sub)
        if len(members) > 1:
            diam[sub - 1] = geodesic[np.ix_(members, members)].max()
    return diam


def model_manifolds(
    vectors: np.ndarray,
    labels: np.ndarray,
    params: ManifoldParams,
    sample_ids: np.ndarray | None = None,
) -> SubClassPartition:
    """Run graph -> geodesics -> clustering for every class.

    `vectors` are flattened (normalized) patch vectors; `labels` their
    class ids; `sample_ids` optional global indices (defaults to
    positions). Classes are processed in ascending id order; the whole
    procedure is deterministic.
    """
    params.validate()
    x = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(labels)
    ids = np.arange(len(labels), dtype=np.int64) if sample_ids is None else np.asarray(sample_ids, np.int64)
    if len(x) != len(labels) or len(ids) != len(labels):
        raise ValueError("vectors, labels and sample_ids must have equal length")
    if len(labels) == 0:
        raise ValueError("no training samples")

    classes: dict[int, ClassPartition] = {}
    for class_id in np.unique(labels):
        local = np.flatnonzero(labels == class_id)
        class_x = x[local]
        n_s = len(local)
        if n_s == 1:
            classes[int(class_id)] = ClassPartition(
                class_id=int(class_id),
                sample_ids=ids[local],
                subclass_ids=np.ones(1, dtype=np.int64),
                num_subclasses=1,
                component_count=1,
                subclass_diameters=np.zeros(1),
            )
            continue
        euclid = pairwise_euclidean(class_x)
        graph = build_class_graph(class_x, params.b, node_ids=ids[local], dist=euclid)
        geo = geodesic_matrix(graph)
        result = cluster_subclasses(geo, params.k, euclidean=euclid)
        classes[int(class_id)] = ClassPartition(
            class_id=int(class_id),
            sample_ids=ids[local],
            subclass_ids=result.labels,
            num_subclasses=result.num_subclasses,
            component_count=result.component_count,
            fallback_merged=result.fallback_merged,
            undersized=result.undersized,
            subclass_diameters=_subclass_diameters(geo, result.labels, result.num_subclasses),
        )
    return SubClassPartition(k=params.k, b=params.b, classes=classes)


def save_partition(partition: SubClassPartition, path: str | Path) -> None:
    """Plain-text dump: `# k=<k> b=<b>` header, then one
    `sample_index class_id subclass_id` line per sample, ascending."""
    rows = []
    for cp in partition.classes.values():
        for sid, sub in zip(cp.sample_ids, cp.subclass_ids):
            rows.append((int(sid), cp.class_id, int(sub)))
    rows.sort()
    lines = [f"# k={partition.k} b={partition.b}"]
    lines.extend(f"{s} {c} {e}" for s, c, e in rows)
    Path(path).write_text("".join(f"{ln}\n" for ln in lines))


def load_partition(path: str | Path) -> SubClassPartition:
    """Read a partition dump (diagnostics are not stored in the file)."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing partition header")
    header = dict(tok.split("=") for tok in lines[0].lstrip("# ").split())
    k, b = int(header["k"]), int(header["b"])
    by_class: dict[int, list[tuple[int, int]]] = {}
    for ln in lines[1:]:
        if not ln.strip():
            continue
        s, c, e = (int(t) for t in ln.split())
        by_class.setdefault(c, []).append((s, e))
    classes = {}
    for c, pairs in sorted(by_class.items()):
        pairs.sort()
        sids = np.array([p[0] for p in pairs], dtype=np.int64)
        subs = np.array([p[1] for p in pairs], dtype=np.int64)
        classes[c] = ClassPartition(
            class_id=c,
            sample_ids=sids,
            subclass_ids=subs,
            num_subclasses=int(subs.max(initial=0)),
        )
    return SubClassPartition(k=k, b=b, classes=classes)


def save_geodesic(matrix: np.ndarray, path: str | Path) -> None:
    """Binary dump: magic GEOD, u32 n, then n*n float32 row-major."""
    matrix = np.asarray(matrix)
    n = matrix.shape[0]
    with Path(path).open("wb") as fh:
        fh.write(_GEOD_MAGIC)
        fh.write(np.array([n], dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def load_geodesic(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _GEOD_MAGIC:
        raise ValueError(f"{path}: not a geodesic matrix dump")
    n = int(np.frombuffer(raw, dtype="<u4", count=1, offset=4)[0])
    body = np.frombuffer(raw, dtype="<f4", count=n * n, offset=8)
    return body.reshape(n, n).astype(np.float64)
