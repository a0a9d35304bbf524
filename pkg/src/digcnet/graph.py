"""Flow intersection graph, normalized Laplacians, and spectral clustering.

Flows become graph nodes; two flows are adjacent when they share a road
intersection, i.e. any pair of their segment endpoints coincides within a
snap tolerance.  Two normalized forms are kept separate on purpose:

* ``clustering_laplacian``   L = I - D^{-1/2} A D^{-1/2}, eigenvalues in [0, 2],
  used for spectral district discovery;
* ``convolution_laplacian``  D~^{-1/2} (A + I) D~^{-1/2}, the self-loop
  propagation operator used by the graph-convolutional layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import FlowSegment
from .errors import ConfigError, ParseError

EARTH_RADIUS_M = 6371000.0

# Full-scale deployments this code is sized against (flows, intersections).
CITY_SCALE_REFERENCE = {
    "san_francisco": {"flows": 2416, "intersections": 19334},
    "new_york": {"flows": 13028, "intersections": 92470},
}


def flow_distance_m(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Equirectangular ground distance in meters between two (lat, lng) points.

    Adequate at city scale; longitude is compressed by the cosine of the
    midpoint latitude.
    """
    lat1, lng1 = a
    lat2, lng2 = b
    mid = math.radians((lat1 + lat2) / 2.0)
    dlat = math.radians(lat2 - lat1)
    dlng = math.radians(lng2 - lng1) * math.cos(mid)
    return EARTH_RADIUS_M * math.hypot(dlat, dlng)


def distances_to_point(
    centroids: np.ndarray, point: tuple[float, float]
) -> np.ndarray:
    """Vectorized equirectangular distance from each (lat, lng) row to a point."""
    lat, lng = point
    mid = np.radians((centroids[:, 0] + lat) / 2.0)
    dlat = np.radians(lat - centroids[:, 0])
    dlng = np.radians(lng - centroids[:, 1]) * np.cos(mid)
    return EARTH_RADIUS_M * np.hypot(dlat, dlng)


def centroid_array(flows: list[FlowSegment]) -> np.ndarray:
    return np.array([f.centroid for f in flows], dtype=np.float64).reshape(-1, 2)


@dataclass(eq=False)
class FlowGraph:
    """Undirected flow intersection graph over N flows."""

    adjacency: np.ndarray  # (N, N) float64, zero diagonal, symmetric

    def __post_init__(self) -> None:
        a = np.asarray(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ConfigError("adjacency must be square")
        if not np.array_equal(a, a.T):
            raise ConfigError("adjacency must be symmetric")
        if np.trace(a) != 0:
            raise ConfigError("adjacency must have a zero diagonal")
        self.adjacency = a

    @property
    def n_flows(self) -> int:
        return self.adjacency.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def n_edges(self) -> int:
        return int(round(self.adjacency.sum() / 2.0))

    def clustering_laplacian(self) -> np.ndarray:
        """Symmetric normalized Laplacian I - D^{-1/2} A D^{-1/2}.

        Isolated flows (degree 0) use the convention D^{-1/2} = 0, which
        leaves their Laplacian row as the identity row.
        """
        deg = self.degrees
        inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
        norm = self.adjacency * inv_sqrt[:, None] * inv_sqrt[None, :]
        return np.eye(self.n_flows) - norm

    def convolution_laplacian(self) -> np.ndarray:
        """Self-loop propagation operator D~^{-1/2} (A + I) D~^{-1/2}."""
        a_tilde = self.adjacency + np.eye(self.n_flows)
        d_tilde = a_tilde.sum(axis=1)
        inv_sqrt = 1.0 / np.sqrt(d_tilde)
        return a_tilde * inv_sqrt[:, None] * inv_sqrt[None, :]

    def connected_components(self) -> np.ndarray:
        """Component label per flow, labelled by order of first discovery."""
        n = self.n_flows
        labels = np.full(n, -1, dtype=np.int64)
        current = 0
        for start in range(n):
            if labels[start] >= 0:
                continue
            stack = [start]
            labels[start] = current
            while stack:
                node = stack.pop()
                for nb in np.nonzero(self.adjacency[node])[0]:
                    if labels[nb] < 0:
                        labels[nb] = current
                        stack.append(int(nb))
            current += 1
        return labels


def build_flow_graph(
    flows: list[FlowSegment], snap_tolerance_deg: float = 1e-6
) -> FlowGraph:
    """Connect flows whose segment endpoints coincide within the snap tolerance."""
    if not flows:
        raise ParseError("cannot build a flow graph from zero flows")
    n = len(flows)
    # Snap endpoints onto a grid so shared intersections compare exactly.
    endpoint_ids: dict[tuple[int, int], list[int]] = {}
    for idx, flow in enumerate(flows):
        for lat, lng in flow.endpoints:
            key = (round(lat / snap_tolerance_deg), round(lng / snap_tolerance_deg))
            endpoint_ids.setdefault(key, []).append(idx)
    adjacency = np.zeros((n, n))
    for members in endpoint_ids.values():
        for i in members:
            for j in members:
                if i != j:
                    adjacency[i, j] = 1.0
    return FlowGraph(adjacency=adjacency)


def spectral_embed(graph: FlowGraph, k: int) -> np.ndarray:
    """Rows of the k smallest-eigenvalue eigenvectors of the clustering Laplacian."""
    if k < 1 or k > graph.n_flows:
        raise ConfigError(f"cluster count k={k} out of range 1..{graph.n_flows}")
    lap = graph.clustering_laplacian()
    try:
        _, vecs = np.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError(f"eigendecomposition failed: {exc}") from exc
    return np.ascontiguousarray(vecs[:, :k])


@dataclass(eq=False)
class ClusterAssignment:
    """Result of spectral clustering: one label in 0..k-1 per flow."""

    labels: np.ndarray
    k: int
    embedding: np.ndarray
    inertia_history: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.k:
            raise ConfigError("cluster labels out of range")
        for c in range(self.k):
            if not np.any(self.labels == c):
                raise ConfigError(f"cluster {c} is empty")


def kmeans_cluster(
    points: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = 300,
    tol: float = 1e-6,
) -> tuple[np.ndarray, np.ndarray, tuple[float, ...]]:
    """Seeded k-means++ with Lloyd iterations.

    Returns (labels, centroids, inertia history).  Empty clusters are
    reseeded from the point farthest from its assigned centroid.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k < 1 or k > n:
        raise ConfigError(f"k={k} out of range for {n} points")
    rng = np.random.default_rng(seed)

    # k-means++ seeding
    centroids = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    closest_sq = ((points - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = closest_sq.sum()
        if total <= 0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=closest_sq / total))
        centroids[c] = points[pick]
        closest_sq = np.minimum(closest_sq, ((points - centroids[c]) ** 2).sum(axis=1))

    labels = np.zeros(n, dtype=np.int64)
    history: list[float] = []
    for _ in range(max_iter):
        dist_sq = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = dist_sq.argmin(axis=1)
        # Reseed empty clusters from the worst-fit point.
        for c in range(k):
            if not np.any(labels == c):
                worst = int(dist_sq[np.arange(n), labels].argmax())
                centroids[c] = points[worst]
                labels[worst] = c
                dist_sq[:, c] = ((points - centroids[c]) ** 2).sum(axis=1)
        history.append(float(dist_sq[np.arange(n), labels].sum()))
        new_centroids = np.stack(
            [points[labels == c].mean(axis=0) for c in range(k)]
        )
        shift = float(np.abs(new_centroids - centroids).max())
        centroids = new_centroids
        if shift <= tol:
            break
    dist_sq = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = dist_sq.argmin(axis=1)
    for c in range(k):
        if not np.any(labels == c):
            worst = int(dist_sq[np.arange(n), labels].argmax())
            labels[worst] = c
    history.append(float(((points - centroids[labels]) ** 2).sum()))
    return labels, centroids, tuple(history)


def cluster_flows(graph: FlowGraph, k: int, seed: int) -> ClusterAssignment:
    """Spectral embedding of the clustering Laplacian followed by k-means++."""
    embedding = spectral_embed(graph, k)
    labels, _, history = kmeans_cluster(embedding, k, seed)
    return ClusterAssignment(
        labels=labels, k=k, embedding=embedding, inertia_history=history
    )
