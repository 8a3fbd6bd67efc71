import math

import numpy as np
import pytest

import oracles
from manifold_embed.dataset import SyntheticSpec, synthesize
from manifold_embed.evaluation import adjusted_rand_index
from manifold_embed.manifold import (
    ManifoldParams,
    build_class_graph,
    cluster_subclasses,
    connected_components,
    geodesic_matrix,
    load_geodesic,
    load_partition,
    model_manifolds,
    pairwise_euclidean,
    save_geodesic,
    save_partition,
)


def random_cloud(rng, n, dim=3, clusters=1, spread=8.0):
    """Point cloud, optionally split into well-separated blobs."""
    centers = rng.normal(scale=spread, size=(clusters, dim))
    assign = rng.integers(0, clusters, size=n)
    return centers[assign] + rng.normal(size=(n, dim))


class TestGraph:
    def test_collinear_points_union_symmetrization(self):
        graph = build_class_graph(np.array([[0.0], [1.0], [3.0]]), b=1)
        assert graph.neighbors[0].tolist() == [1]
        assert graph.neighbors[1].tolist() == [0, 2]  # 3 pulls in 1
        assert graph.neighbors[2].tolist() == [1]
        assert graph.weights[0].tolist() == [1.0]
        assert graph.weights[1].tolist() == [1.0, 2.0]
        assert graph.weights[2].tolist() == [2.0]

    def test_large_b_gives_complete_graph(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(6, 2))
        graph = build_class_graph(x, b=10)
        dist = pairwise_euclidean(x)
        for i in range(6):
            assert graph.neighbors[i].tolist() == [j for j in range(6) if j != i]
            np.testing.assert_array_equal(
                graph.weights[i], dist[i, graph.neighbors[i]]
            )

    def test_duplicate_points_zero_weight_edge(self):
        graph = build_class_graph(np.array([[2.0, 2.0], [2.0, 2.0]]), b=1)
        assert graph.neighbors[0].tolist() == [1]
        assert graph.weights[0][0] == 0.0

    def test_rejects_tiny_input(self):
        with pytest.raises(ValueError, match="at least 2"):
            build_class_graph(np.array([[1.0]]), b=1)

    def test_symmetry_and_degree(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n = int(rng.integers(2, 25))
            b = int(rng.integers(1, 6))
            x = random_cloud(rng, n)
            graph = build_class_graph(x, b)
            dist = pairwise_euclidean(x)
            b_eff = min(b, n - 1)
            for i in range(n):
                assert len(graph.neighbors[i]) >= b_eff
                for j, w in zip(graph.neighbors[i], graph.weights[i]):
                    assert w == dist[i, j]  # weights exactly Euclidean
                    assert i in graph.neighbors[j]  # undirected

    def test_pairwise_distances(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(10, 4))
        dist = pairwise_euclidean(x)
        np.testing.assert_array_equal(dist, dist.T)  # exactly symmetric
        assert np.all(np.diag(dist) == 0.0)
        for i in range(10):
            for j in range(10):
                assert dist[i, j] == pytest.approx(
                    np.linalg.norm(x[i] - x[j]), rel=1e-12
                )


class TestGeodesics:
    def test_path_graph(self):
        geo = geodesic_matrix(build_class_graph(np.array([[0.0], [1.0], [3.0]]), b=1))
        assert geo[0, 2] == 3.0
        assert geo[2, 0] == 3.0
        assert geo[0, 1] == 1.0

    def test_disconnected_pairs_are_infinite(self):
        x = np.array([[0.0], [0.1], [50.0], [50.1]])
        geo = geodesic_matrix(build_class_graph(x, b=1))
        assert math.isinf(geo[0, 2]) and math.isinf(geo[1, 3])
        assert geo[0, 1] == pytest.approx(0.1)
        comp = connected_components(geo)
        assert comp[0] == comp[1] != comp[2] == comp[3]

    def test_matches_floyd_warshall_n40(self):
        rng = np.random.default_rng(40)
        graph = build_class_graph(random_cloud(rng, 40, clusters=2), b=3)
        ours = geodesic_matrix(graph)
        reference = oracles.floyd_warshall(oracles.graph_adjacency(graph))
        assert np.allclose(ours, reference, rtol=1e-12, atol=0.0)

    def test_matches_floyd_warshall_many(self):
        rng = np.random.default_rng(41)
        for _ in range(30):
            n = int(rng.integers(2, 30))
            graph = build_class_graph(
                random_cloud(rng, n, clusters=int(rng.integers(1, 4))),
                b=int(rng.integers(1, 5)),
            )
            ours = geodesic_matrix(graph)
            reference = oracles.floyd_warshall(oracles.graph_adjacency(graph))
            assert np.allclose(ours, reference, rtol=1e-12, atol=0.0)

    def test_metric_properties(self):
        rng = np.random.default_rng(2)
        x = random_cloud(rng, 18)
        dist = pairwise_euclidean(x)
        geo = geodesic_matrix(build_class_graph(x, b=3, dist=dist))
        assert np.all(np.diag(geo) == 0.0)
        np.testing.assert_array_equal(geo, geo.T)
        # geodesic can never undercut the straight-line distance
        finite = np.isfinite(geo)
        assert np.all(geo[finite] >= dist[finite] - 1e-12)
        n = len(x)
        for i in range(n):
            for j in range(n):
                for m in range(n):
                    if np.isfinite(geo[i, m]) and np.isfinite(geo[m, j]):
                        assert geo[i, j] <= geo[i, m] + geo[m, j] + 1e-12

    def test_fewer_edges_never_shorten_paths(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            x = random_cloud(rng, int(rng.integers(5, 20)))
            sparse = geodesic_matrix(build_class_graph(x, b=2))
            dense = geodesic_matrix(build_class_graph(x, b=5))
            assert np.all(sparse >= dense - 1e-12)


class TestClustering:
    def test_k_one_single_subclass(self):
        rng = np.random.default_rng(1)
        geo = geodesic_matrix(build_class_graph(rng.normal(size=(8, 2)), b=3))
        result = cluster_subclasses(geo, k=1)
        assert result.labels.tolist() == [1] * 8
        assert result.num_subclasses == 1

    def test_k_equals_n_singletons(self):
        rng = np.random.default_rng(1)
        geo = geodesic_matrix(build_class_graph(rng.normal(size=(5, 2)), b=2))
        result = cluster_subclasses(geo, k=5)
        assert result.labels.tolist() == [1, 2, 3, 4, 5]

    def test_two_groups_on_a_line(self):
        x = np.array([[0.0], [1.0], [2.0], [10.0], [11.0], [12.0]])
        geo = geodesic_matrix(build_class_graph(x, b=5))
        result = cluster_subclasses(geo, k=2)
        assert result.labels.tolist() == [1, 1, 1, 2, 2, 2]
        # greedy answer matches the exhaustive minimax optimum here
        blocks = oracles.labels_to_blocks(result.labels)
        assert oracles.partition_objective(geo, blocks) == pytest.approx(
            oracles.brute_force_minimax(geo, 2)
        )

    def test_undersized_class_warns(self):
        geo = geodesic_matrix(build_class_graph(np.array([[0.0], [1.0]]), b=1))
        with pytest.warns(UserWarning, match="singleton"):
            result = cluster_subclasses(geo, k=5)
        assert result.undersized
        assert result.labels.tolist() == [1, 2]

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(17)
        for trial in range(40):
            n = int(rng.integers(2, 30))
            x = random_cloud(rng, n, clusters=int(rng.integers(1, 4)))
            dist = pairwise_euclidean(x)
            geo = oracles.floyd_warshall(
                oracles.graph_adjacency(build_class_graph(x, int(rng.integers(1, 5)), dist=dist))
            )
            k = int(rng.integers(1, 6))
            ours = cluster_subclasses(geo, k, euclidean=dist)
            ref_labels, ref_count, ref_comp, ref_fb, ref_under = oracles.naive_cluster(
                geo, k, euclidean=dist
            )
            assert ours.labels.tolist() == ref_labels.tolist(), f"trial {trial}"
            assert ours.num_subclasses == ref_count
            assert ours.component_count == ref_comp
            assert ours.fallback_merged == ref_fb
            assert ours.undersized == ref_under

    @pytest.mark.filterwarnings("ignore:class has:UserWarning")
    def test_objective_close_to_brute_force(self):
        rng = np.random.default_rng(23)
        worst = 0.0
        for _ in range(25):
            n = int(rng.integers(2, 9))
            x = random_cloud(rng, n, dim=2)
            dist = pairwise_euclidean(x)
            geo = geodesic_matrix(build_class_graph(x, b=2, dist=dist))
            k = int(rng.integers(1, 4))
            result = cluster_subclasses(geo, k, euclidean=dist)
            got = oracles.partition_objective(
                geo, oracles.labels_to_blocks(result.labels)
            )
            best = oracles.brute_force_minimax(geo, k)
            if best == 0.0 or math.isinf(best):
                assert got == best
                continue
            worst = max(worst, got / best)
        assert worst <= 2.0

    def test_never_merges_across_components(self):
        x = np.array([[0.0], [0.5], [1.0], [40.0], [40.5], [41.0]])
        geo = geodesic_matrix(build_class_graph(x, b=1))
        result = cluster_subclasses(geo, k=2, euclidean=pairwise_euclidean(x))
        comp = connected_components(geo)
        assert not result.fallback_merged
        for sub in (1, 2):
            members = np.flatnonzero(result.labels == sub)
            assert len(set(comp[members])) == 1

    def test_fallback_merges_nearest_components(self):
        # three singleton-ish components at 0, 10, 14; k=2 must join the
        # two nearest (10 and 14) and flag the fallback
        x = np.array([[0.0], [0.2], [10.0], [10.2], [14.0], [14.2]])
        dist = pairwise_euclidean(x)
        geo = geodesic_matrix(build_class_graph(x, b=1))
        result = cluster_subclasses(geo, k=2, euclidean=dist)
        assert result.fallback_merged
        assert result.component_count == 3
        assert result.labels.tolist() == [1, 1, 2, 2, 2, 2]

    def test_fallback_requires_euclidean(self):
        x = np.array([[0.0], [0.2], [10.0], [10.2], [14.0], [14.2]])
        geo = geodesic_matrix(build_class_graph(x, b=1))
        with pytest.raises(ValueError, match="Euclidean"):
            cluster_subclasses(geo, k=2)

    def test_deterministic_under_duplicates(self):
        x = np.zeros((6, 2))
        x[3:] += 1.0
        dist = pairwise_euclidean(x)
        geo = geodesic_matrix(build_class_graph(x, b=2, dist=dist))
        a = cluster_subclasses(geo, k=2, euclidean=dist)
        b = cluster_subclasses(geo, k=2, euclidean=dist)
        assert a.labels.tolist() == b.labels.tolist() == [1, 1, 1, 2, 2, 2]


class TestModelManifolds:
    def test_tight_blobs_k1(self):
        rng = np.random.default_rng(4)
        x = np.concatenate([rng.normal(0, 0.1, (10, 2)), rng.normal(5, 0.1, (10, 2))])
        labels = np.repeat([1, 2], 10)
        partition = model_manifolds(x, labels, ManifoldParams(k=1, b=3))
        assert partition.classes[1].num_subclasses == 1
        assert partition.classes[2].num_subclasses == 1
        assert partition.num_samples() == 20

    def test_planted_swiss_roll_recovered(self):
        data = synthesize(SyntheticSpec(1, 2, 80, 3, "swiss-roll", 0.0, seed=5))
        partition = model_manifolds(
            data.samples, data.class_labels, ManifoldParams(k=2, b=5)
        )
        found = partition.classes[1].subclass_ids
        assert adjusted_rand_index(data.subcluster_ids, found) == 1.0

    def test_planted_arcs_recovered(self):
        data = synthesize(SyntheticSpec(2, 2, 60, 3, "arc", 0.02, seed=8))
        partition = model_manifolds(
            data.samples, data.class_labels, ManifoldParams(k=2, b=5)
        )
        for cid in (1, 2):
            mask = data.class_labels == cid
            found = partition.classes[cid].subclass_ids
            assert adjusted_rand_index(data.subcluster_ids[mask], found) == 1.0

    def test_single_sample_class(self):
        x = np.array([[0.0, 0.0], [1.0, 0.0], [1.1, 0.0]])
        labels = np.array([1, 2, 2])
        partition = model_manifolds(x, labels, ManifoldParams(k=2, b=1))
        assert partition.classes[1].num_subclasses == 1
        assert partition.classes[1].sample_ids.tolist() == [0]

    def test_undersized_class_warns_and_flags(self):
        x = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        labels = np.array([1, 1, 1])
        with pytest.warns(UserWarning, match="singleton"):
            partition = model_manifolds(x, labels, ManifoldParams(k=5, b=2))
        assert partition.classes[1].undersized
        assert partition.classes[1].num_subclasses == 3

    def test_tags_cover_all_samples(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(30, 3))
        labels = rng.integers(1, 4, size=30)
        ids = np.arange(100, 130)
        partition = model_manifolds(x, labels, ManifoldParams(k=2, b=3), sample_ids=ids)
        tags = partition.tags()
        assert sorted(tags) == ids.tolist()
        for i, sid in enumerate(ids):
            assert tags[int(sid)][0] == labels[i]

    def test_diameters_reported(self):
        x = np.array([[0.0], [1.0], [2.0], [10.0], [11.0], [12.0]])
        labels = np.ones(6, dtype=int)
        partition = model_manifolds(x, labels, ManifoldParams(k=2, b=5))
        np.testing.assert_allclose(partition.classes[1].subclass_diameters, [2.0, 2.0])


class TestPersistence:
    def test_partition_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(20, 3))
        labels = np.repeat([1, 2], 10)
        ids = np.arange(50, 70)
        partition = model_manifolds(x, labels, ManifoldParams(k=2, b=3), sample_ids=ids)
        path = tmp_path / "partition.txt"
        save_partition(partition, path)
        loaded = load_partition(path)
        assert loaded.k == 2 and loaded.b == 3
        assert loaded.tags() == partition.tags()

    def test_partition_header_required(self, tmp_path):
        path = tmp_path / "broken.txt"
        path.write_text("0 1 1\n")
        with pytest.raises(ValueError, match="header"):
            load_partition(path)

    def test_geodesic_dump_round_trip(self, tmp_path):
        rng = np.random.default_rng(10)
        geo = geodesic_matrix(build_class_graph(rng.normal(size=(7, 2)), b=2))
        path = tmp_path / "geo.bin"
        save_geodesic(geo, path)
        loaded = load_geodesic(path)
        np.testing.assert_array_equal(loaded, geo.astype(np.float32).astype(np.float64))

    def test_geodesic_dump_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(ValueError, match="geodesic"):
            load_geodesic(path)
