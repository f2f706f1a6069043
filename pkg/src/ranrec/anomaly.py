"""Isolation forest over stored embeddings.

Each tree partitions a uniform subsample with random axis-aligned splits;
points that isolate in few splits are anomalous. The score is
``2 ** (-E(h) / c(psi))`` where ``E(h)`` is the expected path length over
trees (with the standard truncated-leaf adjustment ``c``), so it always
falls in (0, 1) and grows as paths shorten.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .inference import EmbeddingStore
from .rng import substream

EULER_GAMMA = 0.5772156649


class DegenerateEmbeddingsError(ValueError):
    """All points identical: no split exists, scores cannot discriminate."""


@dataclass(frozen=True)
class TreeLeaf:
    size: int


@dataclass(frozen=True)
class TreeSplit:
    dim: int
    value: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[TreeLeaf, TreeSplit]


@dataclass(frozen=True)
class IsolationTree:
    root: TreeNode


@dataclass(frozen=True)
class IsolationForest:
    trees: tuple[IsolationTree, ...]
    psi: int
    n: int
    seed: int
    dim: int


def average_path_length(m: int) -> float:
    """Expected unsuccessful-search path length for ``m`` points."""
    if m <= 1:
        return 0.0
    if m == 2:
        return 1.0
    return 2.0 * (math.log(m - 1) + EULER_GAMMA) - 2.0 * (m - 1) / m


def _split_value(rng: np.random.Generator, lo: float, hi: float) -> float:
    # Strictly inside (lo, hi); redraw on the measure-zero boundary hits.
    while True:
        value = lo + rng.random() * (hi - lo)
        if lo < value < hi:
            return value


def _build_tree(points: np.ndarray, depth: int, limit: int, rng: np.random.Generator) -> TreeNode:
    m = points.shape[0]
    if m <= 1 or depth >= limit:
        return TreeLeaf(size=m)
    lows = points.min(axis=0)
    highs = points.max(axis=0)
    splittable = np.flatnonzero(highs > lows)
    if splittable.size == 0:
        return TreeLeaf(size=m)  # identical points
    dim = int(splittable[rng.integers(splittable.size)])
    value = _split_value(rng, float(lows[dim]), float(highs[dim]))
    mask = points[:, dim] < value
    return TreeSplit(
        dim=dim,
        value=value,
        left=_build_tree(points[mask], depth + 1, limit, rng),
        right=_build_tree(points[~mask], depth + 1, limit, rng),
    )


def fit_forest(
    embeddings: Sequence[np.ndarray] | np.ndarray,
    t: int = 100,
    psi: int | None = None,
    seed: int = 0,
) -> IsolationForest:
    """Fit ``t`` trees, each on an independent uniform subsample of size psi.

    psi defaults to min(256, n). Depth is capped at ceil(log2(psi)). Raises
    ``DegenerateEmbeddingsError`` when every point is identical; report raw
    path lengths without a threshold in that case.
    """
    matrix = np.asarray(np.stack([np.asarray(e, dtype=np.float64).ravel() for e in embeddings]))
    n = matrix.shape[0]
    if n < 2:
        raise ValueError("need at least 2 embeddings to fit a forest")
    if t < 1:
        raise ValueError("t must be >= 1")
    if psi is None:
        psi = min(256, n)
    if not 2 <= psi <= n:
        raise ValueError(f"psi={psi} must be in [2, {n}]")
    if (matrix == matrix[0]).all():
        raise DegenerateEmbeddingsError(
            "all embeddings are identical; no split separates them, so scores "
            "carry no ranking - produce a threshold-free report instead"
        )
    limit = math.ceil(math.log2(psi))
    trees = []
    for index in range(t):
        rng = substream(seed, "tree", index)
        sample = matrix[rng.choice(n, size=psi, replace=False)]
        trees.append(IsolationTree(root=_build_tree(sample, 0, limit, rng)))
    return IsolationForest(trees=tuple(trees), psi=psi, n=n, seed=seed, dim=matrix.shape[1])


def path_length(tree: IsolationTree, z: np.ndarray) -> float:
    """Edges traversed to the landing leaf plus its size adjustment."""
    node = tree.root
    edges = 0
    while isinstance(node, TreeSplit):
        node = node.left if z[node.dim] < node.value else node.right
        edges += 1
    return edges + average_path_length(node.size)


def expected_path_length(forest: IsolationForest, z: np.ndarray) -> float:
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.shape[0] != forest.dim:
        raise ValueError(f"query of length {z.shape[0]} vs forest dimension {forest.dim}")
    return float(np.mean([path_length(tree, z) for tree in forest.trees]))


def anomaly_score(forest: IsolationForest, z: np.ndarray) -> float:
    """``2 ** (-E(h(z)) / c(psi))``, in (0, 1), decreasing in path length."""
    return float(2.0 ** (-expected_path_length(forest, z) / average_path_length(forest.psi)))


@dataclass(frozen=True)
class AnomalyReport:
    threshold: float
    cells: tuple[tuple[str, float], ...]  # (cell_id, score), input order
    flagged: tuple[str, ...]

    def sorted_by_score(self) -> tuple[tuple[str, float], ...]:
        return tuple(sorted(self.cells, key=lambda e: (-e[1], e[0])))


def store_matrix(store: EmbeddingStore, include_configs: bool = False) -> np.ndarray:
    """Per-record feature rows: embeddings, optionally joined with configs.

    Misconfiguration detection needs config columns: embeddings are computed
    from predictors only, so a corrupted configuration is invisible in the
    embedding coordinates alone.
    """
    z = store.embedding_matrix()
    if not include_configs:
        return z
    return np.concatenate([z, store.config_matrix()], axis=1)


def score_network(
    store: EmbeddingStore,
    forest: IsolationForest,
    threshold: float,
    include_configs: bool = False,
) -> AnomalyReport:
    """Score every stored record; flag those with score above the threshold."""
    rows = store_matrix(store, include_configs=include_configs)
    cells = tuple(
        (record.cell_id, anomaly_score(forest, row))
        for record, row in zip(store.records, rows)
    )
    flagged = tuple(cid for cid, score in cells if score > threshold)
    return AnomalyReport(threshold=threshold, cells=cells, flagged=flagged)
