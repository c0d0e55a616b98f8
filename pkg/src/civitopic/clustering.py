# ABOUTME: Minimal HDBSCAN over reduced document vectors with an explicit outlier label
# ABOUTME: Mutual reachability, Prim MST, condensed tree and excess-of-mass selection
# SPDX-License-Identifier: MIT

"""Density-based clustering of reduced document vectors.

The estimator follows the usual HDBSCAN stages:

1. core distance of each point (distance to its ``min_samples``-th neighbour)
2. mutual-reachability distances ``max(core_a, core_b, d(a, b))``
3. minimum spanning tree of the mutual-reachability graph (Prim)
4. single-linkage hierarchy condensed by ``min_cluster_size``
5. flat clusters chosen by excess of mass; everything else is ``-1``

Distances are Euclidean. Edge weights are floored at ``MIN_DISTANCE`` so
density levels (``1 / distance``) stay finite for duplicated points.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .exceptions import DataError, FileSystemError, FormatError, ParameterError
from .models import OUTLIER_TOPIC, ClusterAssignment, EmbeddingMatrix

logger = logging.getLogger(__name__)

MIN_CLUSTER_SIZE = 2
MIN_DISTANCE = 1e-12


@dataclass(frozen=True)
class ClusterParams:
    """``min_cluster_size`` is the pipeline's min_topic_size."""

    min_cluster_size: int = 10
    min_samples: int | None = None

    def __post_init__(self) -> None:
        if self.min_cluster_size < MIN_CLUSTER_SIZE:
            raise ParameterError(
                f"min_cluster_size must be at least {MIN_CLUSTER_SIZE}",
                field="min_cluster_size",
                value=self.min_cluster_size,
            )
        if self.min_samples is not None and not 1 <= self.min_samples <= self.min_cluster_size:
            raise ParameterError(
                "min_samples must lie in [1, min_cluster_size]",
                field="min_samples",
                value=self.min_samples,
            )

    @property
    def effective_min_samples(self) -> int:
        return self.min_samples if self.min_samples is not None else self.min_cluster_size


@dataclass(frozen=True, eq=False)
class CondensedTree:
    """Rows ``(parent, child, lambda, child_size)``; clusters are ids ≥ n_points."""

    parent: np.ndarray
    child: np.ndarray
    lambda_val: np.ndarray
    child_size: np.ndarray
    n_points: int

    @property
    def root(self) -> int:
        return self.n_points

    def cluster_rows(self) -> np.ndarray:
        return self.child_size > 1


def core_distances(points: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance from each point to its ``min_samples``-th nearest other point."""
    n_points = points.shape[0]
    k = min(min_samples, n_points - 1)
    if k < 1:
        return np.zeros(n_points)
    distances, _ = cKDTree(points).query(points, k=k + 1)
    return np.asarray(distances, dtype=np.float64)[:, k]


def mutual_reachability_mst(points: np.ndarray, core: np.ndarray) -> np.ndarray:
    """Prim's algorithm over the dense mutual-reachability graph.

    Returns an ``(n-1, 3)`` array of ``(from, to, weight)`` edges in the order
    they joined the tree. Ties go to the lowest point index.
    """
    n_points = points.shape[0]
    in_tree = np.zeros(n_points, dtype=bool)
    best = np.full(n_points, np.inf)
    source = np.zeros(n_points, dtype=np.int64)
    edges = np.zeros((max(n_points - 1, 0), 3))

    current = 0
    for step in range(n_points - 1):
        in_tree[current] = True
        distance = np.linalg.norm(points - points[current], axis=1)
        reach = np.maximum(distance, np.maximum(core, core[current]))
        closer = ~in_tree & (reach < best)
        best[closer] = reach[closer]
        source[closer] = current
        candidates = np.where(in_tree, np.inf, best)
        current = int(np.argmin(candidates))
        edges[step] = (source[current], current, best[current])
    return edges


def single_linkage(mst: np.ndarray, n_points: int) -> np.ndarray:
    """Scipy-style linkage ``(left, right, distance, size)`` from MST edges."""
    order = np.argsort(mst[:, 2], kind="stable")
    parent = np.arange(2 * n_points - 1)
    size = np.concatenate([np.ones(n_points, dtype=np.int64), np.zeros(n_points - 1, dtype=np.int64)])

    def find(node: int) -> int:
        root = node
        while parent[root] != root:
            root = parent[root]
        while parent[node] != root:
            parent[node], node = root, parent[node]
        return root

    linkage = np.zeros((n_points - 1, 4))
    for row, edge in enumerate(mst[order]):
        left, right = find(int(edge[0])), find(int(edge[1]))
        merged = n_points + row
        linkage[row] = (left, right, edge[2], size[left] + size[right])
        parent[left] = parent[right] = merged
        size[merged] = size[left] + size[right]
    return linkage


def _bfs_from_hierarchy(hierarchy: np.ndarray, bfs_root: int) -> list[int]:
    n_points = hierarchy.shape[0] + 1
    result: list[int] = []
    to_process = [bfs_root]
    while to_process:
        result.extend(to_process)
        internal = [node - n_points for node in to_process if node >= n_points]
        to_process = hierarchy[internal, :2].astype(np.int64).ravel().tolist() if internal else []
    return result


def condense_tree(hierarchy: np.ndarray, min_cluster_size: int) -> CondensedTree:
    """Collapse the single-linkage hierarchy into clusters of ≥ ``min_cluster_size``.

    A split where both sides are large enough births two clusters; otherwise
    the small side's points fall out of the parent at that density level.
    """
    n_points = hierarchy.shape[0] + 1
    root = 2 * hierarchy.shape[0]
    relabel = np.zeros(root + 1, dtype=np.int64)
    relabel[root] = n_points
    next_label = n_points + 1
    ignore = np.zeros(root + 1, dtype=bool)
    rows: list[tuple[int, int, float, int]] = []

    def size_of(node: int) -> int:
        return int(hierarchy[node - n_points, 3]) if node >= n_points else 1

    def drop_points(parent: int, subtree_root: int, lambda_value: float) -> None:
        for sub_node in _bfs_from_hierarchy(hierarchy, subtree_root):
            if sub_node < n_points:
                rows.append((parent, sub_node, lambda_value, 1))
            ignore[sub_node] = True

    for node in _bfs_from_hierarchy(hierarchy, root):
        if ignore[node] or node < n_points:
            continue
        left, right, distance, _ = hierarchy[node - n_points]
        left, right = int(left), int(right)
        lambda_value = 1.0 / max(float(distance), MIN_DISTANCE)
        left_size, right_size = size_of(left), size_of(right)
        cluster = int(relabel[node])

        if left_size >= min_cluster_size and right_size >= min_cluster_size:
            relabel[left] = next_label
            rows.append((cluster, next_label, lambda_value, left_size))
            relabel[right] = next_label + 1
            rows.append((cluster, next_label + 1, lambda_value, right_size))
            next_label += 2
        elif left_size < min_cluster_size and right_size < min_cluster_size:
            drop_points(cluster, left, lambda_value)
            drop_points(cluster, right, lambda_value)
        elif left_size < min_cluster_size:
            relabel[right] = cluster
            drop_points(cluster, left, lambda_value)
        else:
            relabel[left] = cluster
            drop_points(cluster, right, lambda_value)

    table = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return CondensedTree(
        parent=table[:, 0].astype(np.int64),
        child=table[:, 1].astype(np.int64),
        lambda_val=table[:, 2],
        child_size=table[:, 3].astype(np.int64),
        n_points=n_points,
    )


def compute_stability(tree: CondensedTree) -> dict[int, float]:
    """Excess of mass of each cluster: Σ (λ_leave − λ_birth) · size."""
    births = {tree.root: 0.0}
    for child, lam, size in zip(tree.child, tree.lambda_val, tree.child_size):
        if size > 1:
            births[int(child)] = float(lam)

    stability = dict.fromkeys(births, 0.0)
    for parent, lam, size in zip(tree.parent, tree.lambda_val, tree.child_size):
        stability[int(parent)] += (float(lam) - births[int(parent)]) * int(size)
    return stability


def select_clusters(tree: CondensedTree, stability: dict[int, float]) -> list[int]:
    """Excess-of-mass selection, never choosing the root."""
    mask = tree.cluster_rows()
    children: dict[int, list[int]] = {}
    for parent, child in zip(tree.parent[mask], tree.child[mask]):
        children.setdefault(int(parent), []).append(int(child))

    stability = dict(stability)
    candidates = sorted((node for node in stability if node != tree.root), reverse=True)
    is_cluster = dict.fromkeys(candidates, True)
    for node in candidates:
        subtree = sum(stability[child] for child in children.get(node, []))
        if subtree > stability[node]:
            is_cluster[node] = False
            stability[node] = subtree
        else:
            stack = list(children.get(node, []))
            while stack:
                descendant = stack.pop()
                is_cluster[descendant] = False
                stack.extend(children.get(descendant, []))
    return sorted(node for node, chosen in is_cluster.items() if chosen)


def label_points(
    tree: CondensedTree, selected: list[int]
) -> tuple[np.ndarray, np.ndarray]:
    """Labels and membership probabilities for each point.

    A point belongs to the selected cluster on its path to the root, if any.
    Its probability is the density level at which it left, relative to the
    densest member of that cluster.
    """
    cluster_parent = {
        int(c): int(p) for p, c, s in zip(tree.parent, tree.child, tree.child_size) if s > 1
    }
    label_of = {node: index for index, node in enumerate(selected)}

    labels = np.full(tree.n_points, OUTLIER_TOPIC, dtype=np.int64)
    point_lambda = np.zeros(tree.n_points)
    for parent, child, lam, size in zip(tree.parent, tree.child, tree.lambda_val, tree.child_size):
        if size != 1:
            continue
        node = int(parent)
        while node not in label_of and node in cluster_parent:
            node = cluster_parent[node]
        if node in label_of:
            labels[child] = label_of[node]
            point_lambda[child] = lam

    probabilities = np.zeros(tree.n_points)
    for index in range(len(selected)):
        members = labels == index
        densest = point_lambda[members].max()
        probabilities[members] = np.minimum(point_lambda[members], densest) / densest
    return labels, probabilities


class HdbscanClusterer:
    """HDBSCAN estimator; fitted state is exposed in trailing-underscore attributes."""

    def __init__(self, min_cluster_size: int = 10, min_samples: int | None = None):
        self.params = ClusterParams(min_cluster_size, min_samples)
        self.core_distances_: np.ndarray | None = None
        self.minimum_spanning_tree_: np.ndarray | None = None
        self.single_linkage_tree_: np.ndarray | None = None
        self.condensed_tree_: CondensedTree | None = None
        self.labels_: np.ndarray | None = None
        self.probabilities_: np.ndarray | None = None

    def _validate(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2:  # noqa: PLR2004
            raise ParameterError("Points must form a two-dimensional array", field="points")
        n_points, dim = points.shape
        if dim == 0:
            raise ParameterError("Points have zero dimensions", field="dimension", value=0)
        if n_points < self.params.min_cluster_size:
            raise ParameterError(
                f"{n_points} points cannot form a cluster of {self.params.min_cluster_size}",
                field="min_cluster_size",
                value=self.params.min_cluster_size,
            )
        if not np.isfinite(points).all():
            raise DataError("Points contain NaN or Inf", field="points")
        return points

    def fit(self, points: np.ndarray) -> "HdbscanClusterer":
        points = self._validate(points)
        n_points = points.shape[0]
        core = core_distances(points, self.params.effective_min_samples)
        mst = mutual_reachability_mst(points, core)
        mst[:, 2] = np.maximum(mst[:, 2], MIN_DISTANCE)
        hierarchy = single_linkage(mst, n_points)
        tree = condense_tree(hierarchy, self.params.min_cluster_size)

        if np.ptp(mst[:, 2]) == 0:
            # Uniform density: no level separates anything, so all points form one cluster.
            labels = np.zeros(n_points, dtype=np.int64)
            probabilities = np.ones(n_points)
        else:
            selected = select_clusters(tree, compute_stability(tree))
            labels, probabilities = label_points(tree, selected)

        self.core_distances_ = core
        self.minimum_spanning_tree_ = mst
        self.single_linkage_tree_ = hierarchy
        self.condensed_tree_ = tree
        self.labels_ = labels
        self.probabilities_ = probabilities
        logger.debug(
            "HDBSCAN on %d points: %d clusters, %d outliers",
            n_points,
            len(set(labels.tolist()) - {OUTLIER_TOPIC}),
            int(np.sum(labels == OUTLIER_TOPIC)),
        )
        return self

    def fit_predict(self, points: np.ndarray) -> np.ndarray:
        self.fit(points)
        assert self.labels_ is not None
        return self.labels_


def fit_predict(
    points: EmbeddingMatrix | np.ndarray,
    params: ClusterParams,
    doc_ids: tuple[str, ...] | None = None,
) -> ClusterAssignment:
    """Cluster ``points`` and return labels ``0..K-1`` (``-1`` for outliers)."""
    if isinstance(points, EmbeddingMatrix):
        doc_ids = doc_ids or points.doc_ids
        points = points.vectors
    clusterer = HdbscanClusterer(params.min_cluster_size, params.min_samples).fit(points)
    ids = doc_ids or tuple(str(i) for i in range(len(clusterer.labels_)))  # type: ignore[arg-type]
    return ClusterAssignment(ids, clusterer.labels_, clusterer.probabilities_)  # type: ignore[arg-type]


def write_assignment(assignment: ClusterAssignment, path: str | Path) -> None:
    """Write ``doc_id,topic,probability`` rows."""
    frame = pd.DataFrame(
        {
            "doc_id": list(assignment.doc_ids),
            "topic": assignment.labels,
            "probability": assignment.probabilities,
        }
    )
    target = Path(path)
    try:
        frame.to_csv(target, index=False, encoding="utf-8", lineterminator="\n")
    except OSError as e:
        raise FileSystemError(f"Failed to write assignment: {e}", path=str(target)) from e


def read_assignment(path: str | Path) -> ClusterAssignment:
    source = Path(path)
    try:
        frame = pd.read_csv(source, dtype={"doc_id": str}, keep_default_na=False)
    except OSError as e:
        raise FileSystemError(f"Cannot read assignment: {e}", path=str(source)) from e
    missing = {"doc_id", "topic", "probability"} - set(frame.columns)
    if missing:
        raise FormatError(
            f"Assignment file lacks columns {sorted(missing)}",
            field="assignment",
            details={"path": str(source)},
        )
    return ClusterAssignment(
        tuple(frame["doc_id"].astype(str)),
        frame["topic"].to_numpy(dtype=np.int64),
        frame["probability"].to_numpy(dtype=np.float64),
    )
