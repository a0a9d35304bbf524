"""Flow graph construction, Laplacians, spectral clustering, and distances."""

from __future__ import annotations

import numpy as np
import pytest

from digcnet.data import FlowSegment
from digcnet.errors import ConfigError, ParseError
from digcnet.graph import (
    CITY_SCALE_REFERENCE,
    FlowGraph,
    build_flow_graph,
    centroid_array,
    cluster_flows,
    distances_to_point,
    flow_distance_m,
    kmeans_cluster,
    spectral_embed,
)


def segment(flow_id, a, b):
    return FlowSegment(flow_id, a[0], a[1], b[0], b[1])


def path_graph(n):
    """Chain of n flows laid end to end: 0-1-2-...-(n-1)."""
    pts = [(40.0 + 0.002 * i, -100.0) for i in range(n + 1)]
    return [segment(i, pts[i], pts[i + 1]) for i in range(n)]


# --- construction -----------------------------------------------------------


def test_flows_sharing_an_endpoint_become_adjacent():
    graph = build_flow_graph(path_graph(3))
    expected = np.array(
        [[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]
    )
    np.testing.assert_array_equal(graph.adjacency, expected)
    assert graph.n_edges == 2
    np.testing.assert_array_equal(graph.degrees, [1.0, 2.0, 1.0])


def test_three_flows_meeting_at_one_point_form_a_triangle():
    hub = (40.0, -100.0)
    flows = [
        segment(0, hub, (40.002, -100.0)),
        segment(1, hub, (40.0, -99.998)),
        segment(2, hub, (39.998, -100.0)),
    ]
    graph = build_flow_graph(flows)
    assert graph.n_edges == 3
    np.testing.assert_array_equal(graph.degrees, [2.0, 2.0, 2.0])


def test_endpoints_snap_within_tolerance():
    flows = [
        segment(0, (40.0, -100.0), (40.002, -100.0)),
        segment(1, (40.002 + 4e-7, -100.0 - 4e-7), (40.004, -100.0)),
    ]
    assert build_flow_graph(flows).n_edges == 1


def test_zero_flows_rejected():
    with pytest.raises(ParseError):
        build_flow_graph([])


def test_adjacency_validation():
    with pytest.raises(ConfigError, match="symmetric"):
        FlowGraph(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ConfigError, match="diagonal"):
        FlowGraph(np.array([[1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ConfigError, match="square"):
        FlowGraph(np.zeros((2, 3)))


def test_connected_components_labels_by_discovery_order():
    adj = np.zeros((5, 5))
    adj[0, 1] = adj[1, 0] = 1.0
    adj[3, 4] = adj[4, 3] = 1.0
    graph = FlowGraph(adj)
    np.testing.assert_array_equal(graph.connected_components(), [0, 0, 1, 2, 2])


# --- Laplacians ---------------------------------------------------------------


def test_two_node_clustering_laplacian_hand_case():
    graph = FlowGraph(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(
        graph.clustering_laplacian(), [[1.0, -1.0], [-1.0, 1.0]], atol=1e-15
    )


def test_clustering_laplacian_eigenvalues_lie_in_zero_two():
    rng = np.random.default_rng(3)
    adj = (rng.random((20, 20)) < 0.2).astype(float)
    adj = np.triu(adj, 1)
    adj = adj + adj.T
    vals = np.linalg.eigvalsh(FlowGraph(adj).clustering_laplacian())
    assert vals.min() >= -1e-9
    assert vals.max() <= 2.0 + 1e-9


def test_isolated_flow_keeps_identity_row_in_clustering_laplacian():
    adj = np.zeros((3, 3))
    adj[0, 1] = adj[1, 0] = 1.0
    lap = FlowGraph(adj).clustering_laplacian()
    np.testing.assert_array_equal(lap[2], [0.0, 0.0, 1.0])
    assert np.all(np.isfinite(lap))


def test_convolution_laplacian_adds_self_loops_and_normalizes():
    graph = FlowGraph(np.array([[0.0, 1.0], [1.0, 0.0]]))
    # A+I is all-ones, degrees 2 -> every entry 1/2
    np.testing.assert_allclose(graph.convolution_laplacian(), np.full((2, 2), 0.5),
                               atol=1e-15)
    single = FlowGraph(np.zeros((1, 1)))
    np.testing.assert_array_equal(single.convolution_laplacian(), [[1.0]])


def test_convolution_laplacian_is_symmetric_with_unit_spectral_radius():
    rng = np.random.default_rng(4)
    adj = (rng.random((15, 15)) < 0.3).astype(float)
    adj = np.triu(adj, 1)
    adj = adj + adj.T
    conv = FlowGraph(adj).convolution_laplacian()
    np.testing.assert_allclose(conv, conv.T, atol=1e-15)
    vals = np.linalg.eigvalsh(conv)
    assert vals.max() <= 1.0 + 1e-9
    assert vals.min() >= -1.0 - 1e-9


# --- spectral embedding ----------------------------------------------------------


def test_spectral_embedding_columns_are_laplacian_eigenvectors():
    graph = build_flow_graph(path_graph(8))
    lap = graph.clustering_laplacian()
    emb = spectral_embed(graph, 3)
    assert emb.shape == (8, 3)
    vals = np.linalg.eigvalsh(lap)
    for col in range(3):
        v = emb[:, col]
        residual = lap @ v - vals[col] * v
        assert np.linalg.norm(residual) < 1e-8
    gram = emb.T @ emb
    np.testing.assert_allclose(gram, np.eye(3), atol=1e-8)


def test_spectral_embedding_zero_eigenvalue_count_matches_components():
    flows = path_graph(3) + [
        segment(3, (10.0, 10.0), (10.002, 10.0)),
        segment(4, (10.002, 10.0), (10.004, 10.0)),
    ]
    graph = build_flow_graph(flows)
    lap = graph.clustering_laplacian()
    vals = np.linalg.eigvalsh(lap)
    assert np.sum(vals < 1e-10) == 2


def test_spectral_embed_rejects_out_of_range_k():
    graph = build_flow_graph(path_graph(3))
    with pytest.raises(ConfigError):
        spectral_embed(graph, 0)
    with pytest.raises(ConfigError):
        spectral_embed(graph, 4)


# --- k-means ------------------------------------------------------------------------


def test_kmeans_recovers_well_separated_blobs():
    rng = np.random.default_rng(5)
    blob_a = rng.normal(0.0, 0.05, size=(30, 2))
    blob_b = rng.normal(5.0, 0.05, size=(30, 2))
    points = np.vstack([blob_a, blob_b])
    labels, centroids, history = kmeans_cluster(points, 2, seed=9)
    assert len(set(labels[:30])) == 1
    assert len(set(labels[30:])) == 1
    assert labels[0] != labels[30]
    assert centroids.shape == (2, 2)


def test_kmeans_inertia_history_is_monotone_non_increasing():
    rng = np.random.default_rng(6)
    points = rng.normal(size=(50, 3))
    _, _, history = kmeans_cluster(points, 4, seed=1)
    assert len(history) >= 2
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))


def test_kmeans_k_equals_one_labels_everything_zero():
    points = np.random.default_rng(7).normal(size=(10, 2))
    labels, centroids, _ = kmeans_cluster(points, 1, seed=0)
    assert set(labels) == {0}
    np.testing.assert_allclose(centroids[0], points.mean(axis=0), atol=1e-12)


def test_kmeans_is_deterministic_per_seed():
    points = np.random.default_rng(8).normal(size=(40, 2))
    a = kmeans_cluster(points, 3, seed=11)
    b = kmeans_cluster(points, 3, seed=11)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    assert a[2] == b[2]


def test_kmeans_rejects_more_clusters_than_points():
    with pytest.raises(ConfigError):
        kmeans_cluster(np.zeros((3, 2)), 4, seed=0)


def test_kmeans_duplicate_points_never_yield_empty_clusters():
    points = np.zeros((6, 2))
    points[5] = [1.0, 1.0]
    labels, _, _ = kmeans_cluster(points, 3, seed=2)
    assert set(labels) == {0, 1, 2}


# --- spectral clustering end to end -----------------------------------------------


def test_cluster_flows_separates_disconnected_districts():
    flows = path_graph(4) + [
        segment(4, (10.0, 10.0), (10.002, 10.0)),
        segment(5, (10.002, 10.0), (10.004, 10.0)),
        segment(6, (10.004, 10.0), (10.006, 10.0)),
    ]
    graph = build_flow_graph(flows)
    assignment = cluster_flows(graph, 2, seed=5)
    components = graph.connected_components()
    # every cluster lies inside one component
    for c in range(2):
        assert len(set(components[assignment.labels == c])) == 1
    assert assignment.embedding.shape == (7, 2)
    assert len(assignment.inertia_history) >= 1


def test_cluster_flows_k1_is_the_trivial_partition():
    graph = build_flow_graph(path_graph(5))
    assignment = cluster_flows(graph, 1, seed=3)
    np.testing.assert_array_equal(assignment.labels, np.zeros(5, dtype=np.int64))


# --- distances ----------------------------------------------------------------------


def test_distance_of_one_hundredth_degree_latitude():
    d = flow_distance_m((40.0, -100.0), (40.01, -100.0))
    assert abs(d - 1112.0) < 1.0  # ~111.2 km per degree of latitude


def test_distance_is_symmetric_and_zero_at_coincidence():
    a, b = (40.0, -100.0), (40.003, -99.997)
    assert flow_distance_m(a, b) == pytest.approx(flow_distance_m(b, a), rel=1e-12)
    assert flow_distance_m(a, a) == 0.0


def test_longitude_compression_by_latitude():
    at_equator = flow_distance_m((0.0, 0.0), (0.0, 0.01))
    at_60 = flow_distance_m((60.0, 0.0), (60.0, 0.01))
    assert at_60 == pytest.approx(at_equator * 0.5, rel=1e-3)


def test_vectorized_distances_match_scalar():
    flows = path_graph(5)
    centroids = centroid_array(flows)
    point = (40.003, -100.001)
    vec = distances_to_point(centroids, point)
    for i, f in enumerate(flows):
        assert vec[i] == pytest.approx(flow_distance_m(f.centroid, point), rel=1e-12)


def test_city_scale_reference_figures():
    assert CITY_SCALE_REFERENCE["san_francisco"] == {"flows": 2416, "intersections": 19334}
    assert CITY_SCALE_REFERENCE["new_york"] == {"flows": 13028, "intersections": 92470}
