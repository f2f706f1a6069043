"""Per-cell subgraph extraction by uniform neighbor sampling.

Each cell yields one subgraph: the cell itself plus a uniform sample (no
replacement) of at most ``fanout`` of its direct neighbors, with all edges
induced on those vertices. Feature rows are the normalized predictor
vectors, center row first. Sampling is deterministic per (seed, cell id).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .graph import FeatureVectors, NormalizationStats, RanGraph, feature_map
from .rng import substream


@dataclass(frozen=True)
class SamplerConfig:
    fanout: int = 8
    seed: int = 0
    resample_per_epoch: bool = False

    def __post_init__(self) -> None:
        if self.fanout < 1:
            raise ValueError(f"fanout must be >= 1, got {self.fanout}")


@dataclass(frozen=True)
class Subgraph:
    """A center cell, its sampled neighbors, and the induced edges.

    ``edges`` holds local vertex index pairs (i, j) with i < j, where index 0
    is the center and indices 1.. follow ``neighbors`` order. ``features``
    has one predictor-vector row per vertex, center row first.
    """

    center: str
    neighbors: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    features: np.ndarray

    @property
    def vertices(self) -> tuple[str, ...]:
        return (self.center, *self.neighbors)

    @property
    def size(self) -> int:
        return 1 + len(self.neighbors)


@dataclass(frozen=True)
class DatasetEntry:
    subgraph: Subgraph
    target: np.ndarray  # normalized config vector of the center cell


def neighbors(graph: RanGraph, cell_id: str) -> set[str]:
    """The adjacency of one cell; symmetric with the stored edge set."""
    return set(graph.neighbors(cell_id))


def sample_subgraph(
    graph: RanGraph,
    center: str,
    cfg: SamplerConfig,
    features: Mapping[str, FeatureVectors],
    rng: np.random.Generator | None = None,
) -> Subgraph:
    """Sample one subgraph around ``center``.

    ``rng`` defaults to the substream derived from (cfg.seed, center), so
    repeated calls return the identical subgraph.
    """
    adjacency = graph.neighbors(center)  # raises on unknown id
    if rng is None:
        rng = substream(cfg.seed, "subgraph", center)
    k = min(cfg.fanout, len(adjacency))
    if k == len(adjacency):
        sampled = list(adjacency)
    else:
        idx = rng.choice(len(adjacency), size=k, replace=False)
        sampled = [adjacency[i] for i in idx]
    vertices = [center, *sampled]
    index = {cid: i for i, cid in enumerate(vertices)}
    edges = []
    for i, a in enumerate(vertices):
        for b in vertices[i + 1 :]:
            if graph.edge_kind(a, b) is not None:
                edges.append((i, index[b]))
    rows = np.stack([np.asarray(features[cid].x) for cid in vertices])
    rows.flags.writeable = False
    return Subgraph(
        center=center,
        neighbors=tuple(sampled),
        edges=tuple(sorted(edges)),
        features=rows,
    )


def build_dataset(
    graph: RanGraph,
    stats: NormalizationStats,
    cfg: SamplerConfig,
    epoch: int | None = None,
) -> list[DatasetEntry]:
    """One entry per cell, in graph cell order.

    ``epoch`` perturbs the per-cell sampling substreams; it is only used when
    per-epoch resampling is enabled.
    """
    features = feature_map(graph, stats)
    entries = []
    for cell in graph.cells:
        tokens: tuple[str | int, ...] = ("subgraph", cell.cell_id)
        if epoch is not None:
            tokens = ("subgraph", cell.cell_id, "epoch", epoch)
        rng = substream(cfg.seed, *tokens)
        sub = sample_subgraph(graph, cell.cell_id, cfg, features, rng=rng)
        entries.append(DatasetEntry(subgraph=sub, target=features[cell.cell_id].y))
    return entries


def split_indices(n: int, test_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Deterministic disjoint (train, test) index partition of range(n)."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if n < 2:
        raise ValueError("cannot split fewer than 2 entries")
    rng = substream(seed, "split")
    perm = rng.permutation(n)
    n_test = int(round(n * test_fraction))
    n_test = min(max(n_test, 1), n - 1)
    test = sorted(int(i) for i in perm[:n_test])
    train = sorted(int(i) for i in perm[n_test:])
    return train, test


def split(
    dataset: Sequence[DatasetEntry], test_fraction: float, seed: int
) -> tuple[list[DatasetEntry], list[DatasetEntry]]:
    """Disjoint, exhaustive train/test split, deterministic per seed."""
    train_idx, test_idx = split_indices(len(dataset), test_fraction, seed)
    return [dataset[i] for i in train_idx], [dataset[i] for i in test_idx]
