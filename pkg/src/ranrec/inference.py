"""Inductive configuration recommendation from an embedding store.

The store holds one (cell id, embedding, config vector) record per known
cell plus a frozen encoder. A new cell is embedded from its sampled
subgraph; its configuration comes either from the single nearest stored
record or from a per-attribute vote over the K nearest. New cells can be
appended, so later queries may retrieve cells recommended earlier.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .gnn import Checkpoint, GatStack, encode
from .graph import AttributeSchema, NormalizationStats, RanGraph, network_from_json
from .sampler import Subgraph


@dataclass(frozen=True)
class StoreRecord:
    cell_id: str
    z: np.ndarray  # embedding, length d
    y: np.ndarray  # normalized config vector, length Q


class EmbeddingStore:
    """Append-only record list over a frozen encoder."""

    def __init__(self, encoder: GatStack, records: Iterable[StoreRecord] = ()) -> None:
        self.encoder = encoder
        self.records: list[StoreRecord] = []
        self._by_id: dict[str, StoreRecord] = {}
        for record in records:
            self.add(record.cell_id, record.z, record.y)

    @property
    def embedding_dim(self) -> int:
        return self.encoder.out_dim

    def __len__(self) -> int:
        return len(self.records)

    def add(self, cell_id: str, z: np.ndarray, y: np.ndarray) -> None:
        """Append one record; cell ids are unique forever."""
        if cell_id in self._by_id:
            raise ValueError(f"cell id {cell_id!r} already stored")
        z = np.asarray(z, dtype=np.float64).ravel()
        if z.shape[0] != self.embedding_dim:
            raise ValueError(
                f"embedding of length {z.shape[0]} does not match store dimension "
                f"{self.embedding_dim}"
            )
        y = np.asarray(y, dtype=np.float64).ravel()
        record = StoreRecord(cell_id=cell_id, z=z, y=y)
        self.records.append(record)
        self._by_id[cell_id] = record

    def record(self, cell_id: str) -> StoreRecord:
        return self._by_id[cell_id]

    def embedding_matrix(self) -> np.ndarray:
        return np.stack([r.z for r in self.records])

    def config_matrix(self) -> np.ndarray:
        return np.stack([r.y for r in self.records])


def add_to_store(store: EmbeddingStore, cell_id: str, z: np.ndarray, y: np.ndarray) -> EmbeddingStore:
    store.add(cell_id, z, y)
    return store


def embed_new_cell(store: EmbeddingStore, subgraph: Subgraph) -> np.ndarray:
    """Embed a cell from its subgraph; the store itself is not modified."""
    return encode(store.encoder, subgraph)[0, :].copy()


@dataclass(frozen=True)
class DistanceSet:
    """Distances from a query embedding to every stored record.

    Entries are sorted ascending by (distance, cell id); ``removals`` counts
    how many minima have been popped off so far.
    """

    entries: tuple[tuple[str, float], ...]
    removals: int = 0

    def __len__(self) -> int:
        return len(self.entries)


def distance_set(store: EmbeddingStore, z: np.ndarray) -> DistanceSet:
    if not store.records:
        raise ValueError("distance set of an empty store")
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.shape[0] != store.embedding_dim:
        raise ValueError(f"query of length {z.shape[0]} vs store dimension {store.embedding_dim}")
    # Per-record norms rather than one vectorized reduction: any linear-scan
    # oracle reproduces these floats bit for bit, keeping ties identical.
    entries = sorted(
        ((r.cell_id, float(np.linalg.norm(r.z - z))) for r in store.records),
        key=lambda e: (e[1], e[0]),
    )
    return DistanceSet(entries=tuple(entries))


def pop_min(distances: DistanceSet) -> tuple[tuple[str, float], DistanceSet]:
    """Remove and return the current minimum-distance entry."""
    if not distances.entries:
        raise ValueError("pop from an empty distance set")
    head = distances.entries[0]
    return head, DistanceSet(entries=distances.entries[1:], removals=distances.removals + 1)


@dataclass(frozen=True)
class Recommendation:
    y_hat: np.ndarray
    mode: str  # "closest" | "majority"
    sources: tuple[tuple[str, float], ...]
    k: int


def recommend_closest(store: EmbeddingStore, z: np.ndarray) -> Recommendation:
    """Adopt the configuration of the nearest record (ties: smaller cell id)."""
    head, _ = pop_min(distance_set(store, z))
    record = store.record(head[0])
    return Recommendation(y_hat=record.y.copy(), mode="closest", sources=(head,), k=1)


def _aggregate_mode(values: np.ndarray) -> float:
    # Values arrive nearest-first; ties resolve to the nearer neighbor's value.
    counts: dict[float, list[int]] = {}
    for i, v in enumerate(values.tolist()):
        counts.setdefault(v, [0, i])[0] += 1
    best = max(counts.items(), key=lambda kv: (kv[1][0], -kv[1][1]))
    return float(best[0])


def recommend_majority(
    store: EmbeddingStore, z: np.ndarray, k: int, schema: AttributeSchema
) -> Recommendation:
    """Aggregate the K nearest configurations attribute by attribute.

    Each config attribute uses its schema-declared policy: ``mode`` (ties go
    to the nearer neighbor), ``median``, or ``mean``.
    """
    if not 1 <= k <= len(store.records):
        raise ValueError(f"k={k} out of range for a store of {len(store.records)} records")
    distances = distance_set(store, z)
    popped: list[tuple[str, float]] = []
    for _ in range(k):
        head, distances = pop_min(distances)
        popped.append(head)
    votes = np.stack([store.record(cid).y for cid, _ in popped])  # nearest-first rows
    layout = schema.config_layout
    y_hat = np.empty(len(layout))
    for slot, spec in enumerate(layout):
        column = votes[:, slot]
        if spec.aggregation == "mode":
            y_hat[slot] = _aggregate_mode(column)
        elif spec.aggregation == "mean":
            y_hat[slot] = float(column.mean())
        else:
            y_hat[slot] = float(np.median(column))
    return Recommendation(y_hat=y_hat, mode="majority", sources=tuple(popped), k=k)


# ---------------------------------------------------------------------------
# Store persistence (self-contained inference bundle)


@dataclass
class StoreBundle:
    """Everything needed to embed and recommend for cells joining a network."""

    graph: RanGraph
    checkpoint: Checkpoint
    store: EmbeddingStore = field(init=False)

    def __post_init__(self) -> None:
        self.store = EmbeddingStore(self.checkpoint.encoder)

    @property
    def schema(self) -> AttributeSchema:
        return self.graph.schema

    @property
    def stats(self) -> NormalizationStats:
        return self.checkpoint.stats

    def to_json(self) -> dict:
        return {
            "network": self.graph.to_json(),
            "checkpoint": self.checkpoint.to_json(),
            "records": [
                {"cell_id": r.cell_id, "z": r.z.tolist(), "y": r.y.tolist()}
                for r in self.store.records
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "StoreBundle":
        graph = network_from_json(data["network"], source="store")
        checkpoint = Checkpoint.from_json(data["checkpoint"], schema=graph.schema)
        bundle = cls(graph=graph, checkpoint=checkpoint)
        for item in data["records"]:
            bundle.store.add(
                str(item["cell_id"]),
                np.array(item["z"], dtype=np.float64),
                np.array(item["y"], dtype=np.float64),
            )
        return bundle


def load_store(path: str | Path) -> StoreBundle:
    with open(path, "r", encoding="utf-8") as fh:
        return StoreBundle.from_json(json.load(fh))
