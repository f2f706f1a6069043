"""Isolation forest: construction rules, path lengths, score behavior."""

from __future__ import annotations

import math

import numpy as np
import pytest

from ranrec.anomaly import (
    DegenerateEmbeddingsError,
    IsolationTree,
    TreeLeaf,
    TreeSplit,
    anomaly_score,
    average_path_length,
    expected_path_length,
    fit_forest,
    path_length,
    score_network,
    store_matrix,
)
from ranrec.gnn import ArchConfig, init_encoder
from ranrec.inference import EmbeddingStore


def cluster_with_outlier(n=99, d=2, radius=1.0, factor=10.0, seed=0):
    rng = np.random.default_rng(seed)
    points = rng.normal(scale=radius, size=(n, d))
    outlier = np.full(d, factor * radius)
    return np.vstack([points, outlier])


class TestFit:
    def test_two_points_single_split(self):
        forest = fit_forest(np.array([[0.0], [1.0]]), t=1, psi=2, seed=0)
        root = forest.trees[0].root
        assert isinstance(root, TreeSplit)
        assert isinstance(root.left, TreeLeaf) and root.left.size == 1
        assert isinstance(root.right, TreeLeaf) and root.right.size == 1

    def test_same_seed_identical_forests(self):
        points = np.random.default_rng(1).normal(size=(40, 3))
        a = fit_forest(points, t=10, psi=16, seed=5)
        b = fit_forest(points, t=10, psi=16, seed=5)

        def flatten(node):
            if isinstance(node, TreeLeaf):
                return [("leaf", node.size)]
            return (
                [("split", node.dim, node.value)] + flatten(node.left) + flatten(node.right)
            )

        for ta, tb in zip(a.trees, b.trees):
            assert flatten(ta.root) == flatten(tb.root)

    def test_identical_points_rejected(self):
        with pytest.raises(DegenerateEmbeddingsError, match="threshold-free"):
            fit_forest(np.ones((10, 3)), t=5, psi=4, seed=0)

    def test_psi_bounds(self):
        points = np.random.default_rng(0).normal(size=(5, 2))
        with pytest.raises(ValueError, match="psi"):
            fit_forest(points, t=1, psi=6, seed=0)
        with pytest.raises(ValueError, match="psi"):
            fit_forest(points, t=1, psi=1, seed=0)

    def test_depth_never_exceeds_limit(self):
        points = np.random.default_rng(3).normal(size=(300, 4))
        psi = 64
        forest = fit_forest(points, t=20, psi=psi, seed=7)
        limit = math.ceil(math.log2(psi))

        def max_depth(node, depth=0):
            if isinstance(node, TreeLeaf):
                return depth
            return max(max_depth(node.left, depth + 1), max_depth(node.right, depth + 1))

        assert all(max_depth(tree.root) <= limit for tree in forest.trees)

    def test_split_values_strictly_inside(self):
        points = np.random.default_rng(4).normal(size=(64, 3))
        forest = fit_forest(points, t=10, psi=32, seed=9)

        def check(node, lo, hi):
            if isinstance(node, TreeLeaf):
                return
            assert lo[node.dim] < node.value < hi[node.dim] or (
                lo[node.dim] == -np.inf or hi[node.dim] == np.inf
            )
            check(node.left, lo, hi)
            check(node.right, lo, hi)

        for tree in forest.trees:
            check(tree.root, np.full(3, -np.inf), np.full(3, np.inf))


class TestPathLength:
    def test_average_path_conventions(self):
        assert average_path_length(1) == 0.0
        assert average_path_length(2) == 1.0
        # standard harmonic-number form for larger sizes
        assert average_path_length(10) == pytest.approx(
            2.0 * (math.log(9) + 0.5772156649) - 2.0 * 9 / 10
        )

    def test_depth_one_everywhere(self):
        forest = fit_forest(np.array([[0.0], [1.0]]), t=25, psi=2, seed=1)
        # both points isolate after exactly one split, leaves are singletons
        assert expected_path_length(forest, np.array([0.0])) == pytest.approx(1.0)
        assert expected_path_length(forest, np.array([1.0])) == pytest.approx(1.0)

    def test_hand_built_tree_traversal(self):
        #        split(dim 0, 0.5)
        #        /            \
        #   leaf(size 1)   split(dim 1, 0.7)
        #                  /            \
        #             leaf(size 2)   leaf(size 1)
        tree = IsolationTree(
            root=TreeSplit(
                dim=0,
                value=0.5,
                left=TreeLeaf(size=1),
                right=TreeSplit(
                    dim=1, value=0.7, left=TreeLeaf(size=2), right=TreeLeaf(size=1)
                ),
            )
        )
        assert path_length(tree, np.array([0.0, 0.0])) == pytest.approx(1.0)  # left leaf
        assert path_length(tree, np.array([0.9, 0.2])) == pytest.approx(2.0 + 1.0)  # c(2) = 1
        assert path_length(tree, np.array([0.9, 0.9])) == pytest.approx(2.0)

    def test_dimension_mismatch(self):
        forest = fit_forest(np.random.default_rng(0).normal(size=(8, 3)), t=2, psi=4, seed=0)
        with pytest.raises(ValueError, match="dimension"):
            expected_path_length(forest, np.zeros(5))


class TestAnomalyScore:
    def test_balanced_case_half(self):
        forest = fit_forest(np.array([[0.0], [1.0]]), t=3, psi=2, seed=2)
        # E(h) = 1 = c(psi=2), so the score is exactly 0.5
        assert anomaly_score(forest, np.array([0.0])) == pytest.approx(0.5)

    def test_monotone_in_path_length(self):
        points = cluster_with_outlier(seed=5)
        forest = fit_forest(points, t=100, psi=64, seed=5)
        inlier = np.zeros(2)
        outlier = points[-1]
        assert expected_path_length(forest, outlier) < expected_path_length(forest, inlier)
        assert anomaly_score(forest, outlier) > anomaly_score(forest, inlier)

    def test_score_formula(self):
        points = np.random.default_rng(6).normal(size=(32, 2))
        forest = fit_forest(points, t=10, psi=16, seed=6)
        z = np.array([0.3, -0.2])
        expected = 2.0 ** (-expected_path_length(forest, z) / average_path_length(16))
        assert anomaly_score(forest, z) == pytest.approx(expected)
        assert 0.0 < anomaly_score(forest, z) < 1.0


class TestScoreNetwork:
    def _store(self, points):
        arch = ArchConfig(
            in_dim=2,
            embedding_dim=points.shape[1],
            layers=1,
            heads=1,
            head_dim=2,
            ffn_hidden=2,
            hidden_dim=2,
        )
        store = EmbeddingStore(init_encoder(arch, 0))
        for i, p in enumerate(points):
            store.add(f"c{i:03d}", p, np.array([0.5]))
        return store

    def test_threshold_one_flags_nothing(self):
        points = cluster_with_outlier(seed=7)
        store = self._store(points)
        forest = fit_forest(store_matrix(store), t=50, psi=64, seed=7)
        report = score_network(store, forest, threshold=1.0)
        assert report.flagged == ()

    def test_threshold_zero_flags_everything(self):
        points = cluster_with_outlier(seed=8)
        store = self._store(points)
        forest = fit_forest(store_matrix(store), t=50, psi=64, seed=8)
        report = score_network(store, forest, threshold=0.0)
        assert len(report.flagged) == len(store)

    def test_far_outlier_attains_max_score(self):
        points = cluster_with_outlier(n=299, seed=9)
        store = self._store(points)
        forest = fit_forest(store_matrix(store), t=100, psi=min(64, len(store)), seed=9)
        report = score_network(store, forest, threshold=0.6)
        top = max(report.cells, key=lambda e: e[1])
        assert top[0] == "c299"

    def test_outlier_ranks_first_in_95_of_100_seeds(self):
        wins = 0
        for seed in range(100):
            points = cluster_with_outlier(seed=seed)
            forest = fit_forest(points, t=50, psi=64, seed=seed)
            scores = [anomaly_score(forest, p) for p in points]
            if int(np.argmax(scores)) == len(points) - 1:
                wins += 1
        assert wins >= 95

    def test_store_matrix_joins_configs(self):
        points = np.random.default_rng(10).normal(size=(5, 3))
        store = self._store(points)
        joint = store_matrix(store, include_configs=True)
        assert joint.shape == (5, 4)
        assert np.allclose(joint[:, 3], 0.5)
