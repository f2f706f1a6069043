"""Radio-network graph model with feature preprocessing.

Cells are vertices of an undirected graph; edges join cells on the same
radio node (``intra_node``, materialized automatically) or across nodes
(``inter_node``, listed explicitly). Each cell carries a predictor vector
``x`` and a configuration vector ``y``, laid out as the LTE attribute block
followed by the NR block. Values are min-max normalized into [0, 1] from
statistics fitted on training cells; slots of the other technology are 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

TECHNOLOGIES = ("LTE", "NR")
ROLES = ("predictor", "config")
KINDS = ("continuous", "discrete")
AGGREGATIONS = ("mode", "median", "mean")
EDGE_KINDS = ("intra_node", "inter_node")


class NetworkFormatError(ValueError):
    """The network description violates its schema or graph invariants."""


@dataclass(frozen=True)
class AttributeSpec:
    """One named attribute of one technology, with its vector-slot policy."""

    name: str
    technology: str
    role: str
    kind: str
    aggregation: str | None = None

    def __post_init__(self) -> None:
        if self.technology not in TECHNOLOGIES:
            raise NetworkFormatError(f"unknown technology {self.technology!r}")
        if self.role not in ROLES:
            raise NetworkFormatError(f"unknown role {self.role!r}")
        if self.kind not in KINDS:
            raise NetworkFormatError(f"unknown kind {self.kind!r}")
        if self.role == "config":
            if self.aggregation not in AGGREGATIONS:
                raise NetworkFormatError(
                    f"config attribute {self.name!r} needs an aggregation "
                    f"policy from {AGGREGATIONS}"
                )
        elif self.aggregation is not None and self.aggregation not in AGGREGATIONS:
            raise NetworkFormatError(f"unknown aggregation {self.aggregation!r}")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.technology, self.role, self.name)


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered attribute list; order fixes vector slot positions.

    The predictor and config layouts place all LTE attributes first, then
    all NR attributes, preserving declaration order within each block.
    """

    entries: tuple[AttributeSpec, ...]

    def __post_init__(self) -> None:
        seen: set[tuple[str, str, str]] = set()
        for e in self.entries:
            if e.key in seen:
                raise NetworkFormatError(
                    f"duplicate attribute {e.name!r} for {e.technology} {e.role}"
                )
            seen.add(e.key)

    def layout(self, role: str) -> tuple[AttributeSpec, ...]:
        return tuple(
            e
            for tech in TECHNOLOGIES
            for e in self.entries
            if e.role == role and e.technology == tech
        )

    @property
    def predictor_layout(self) -> tuple[AttributeSpec, ...]:
        return self.layout("predictor")

    @property
    def config_layout(self) -> tuple[AttributeSpec, ...]:
        return self.layout("config")

    @property
    def predictor_dim(self) -> int:
        return len(self.predictor_layout)

    @property
    def config_dim(self) -> int:
        return len(self.config_layout)

    def to_json(self) -> list[dict]:
        return [
            {
                "name": e.name,
                "technology": e.technology,
                "role": e.role,
                "kind": e.kind,
                **({"aggregation": e.aggregation} if e.aggregation else {}),
            }
            for e in self.entries
        ]

    @classmethod
    def from_json(cls, data: list[dict]) -> "AttributeSchema":
        entries = []
        for i, item in enumerate(data):
            try:
                entries.append(
                    AttributeSpec(
                        name=str(item["name"]),
                        technology=str(item["technology"]),
                        role=str(item["role"]),
                        kind=str(item["kind"]),
                        aggregation=item.get("aggregation"),
                    )
                )
            except KeyError as exc:
                raise NetworkFormatError(f"schema entry {i}: missing field {exc}") from exc
        return cls(entries=tuple(entries))


@dataclass(frozen=True)
class CellRecord:
    """One cell with raw (unnormalized) attribute values of its technology."""

    cell_id: str
    node_id: str
    technology: str
    raw_predictors: Mapping[str, float]
    raw_configs: Mapping[str, float]

    def __post_init__(self) -> None:
        if self.technology not in TECHNOLOGIES:
            raise NetworkFormatError(
                f"cell {self.cell_id!r}: unknown technology {self.technology!r}"
            )

    def raw_values(self, role: str) -> Mapping[str, float]:
        return self.raw_predictors if role == "predictor" else self.raw_configs


class RanGraph:
    """Immutable undirected cell graph.

    Cells sharing a ``node_id`` are always pairwise connected with kind
    ``intra_node`` (added automatically); ``inter_node`` edges come from the
    input. Self loops are rejected.
    """

    def __init__(
        self,
        schema: AttributeSchema,
        cells: Iterable[CellRecord],
        edges: Iterable[tuple[str, str, str]] = (),
    ) -> None:
        self.schema = schema
        self.cells: tuple[CellRecord, ...] = tuple(cells)
        self._by_id: dict[str, CellRecord] = {}
        for cell in self.cells:
            if cell.cell_id in self._by_id:
                raise NetworkFormatError(f"duplicate cell_id {cell.cell_id!r}")
            self._validate_attributes(cell)
            self._by_id[cell.cell_id] = cell

        edge_kinds: dict[tuple[str, str], str] = {}
        for a, b, kind in edges:
            if a == b:
                raise NetworkFormatError(f"self-loop edge on cell {a!r}")
            if kind not in EDGE_KINDS:
                raise NetworkFormatError(f"unknown edge kind {kind!r}")
            for cid in (a, b):
                if cid not in self._by_id:
                    raise NetworkFormatError(f"edge references unknown cell {cid!r}")
            edge_kinds[(min(a, b), max(a, b))] = kind

        # Intra-node completeness: same radio node implies a clique.
        by_node: dict[str, list[str]] = {}
        for cell in self.cells:
            by_node.setdefault(cell.node_id, []).append(cell.cell_id)
        for members in by_node.values():
            for i, a in enumerate(members):
                for b in members[i + 1 :]:
                    edge_kinds[(min(a, b), max(a, b))] = "intra_node"

        self._edge_kinds = edge_kinds
        self._adjacency: dict[str, tuple[str, ...]] = {c.cell_id: () for c in self.cells}
        adj: dict[str, set[str]] = {c.cell_id: set() for c in self.cells}
        for a, b in edge_kinds:
            adj[a].add(b)
            adj[b].add(a)
        for cid, nbrs in adj.items():
            self._adjacency[cid] = tuple(sorted(nbrs))

    def _validate_attributes(self, cell: CellRecord) -> None:
        for role in ROLES:
            expected = {
                e.name for e in self.schema.layout(role) if e.technology == cell.technology
            }
            got = set(cell.raw_values(role))
            if got - expected:
                raise NetworkFormatError(
                    f"cell {cell.cell_id!r}: unknown or wrong-technology "
                    f"{role} attributes {sorted(got - expected)}"
                )
            # Cells awaiting a recommendation may omit configs entirely.
            if role == "config" and not got:
                continue
            if expected - got:
                raise NetworkFormatError(
                    f"cell {cell.cell_id!r}: missing {role} attributes "
                    f"{sorted(expected - got)}"
                )

    # -- queries ---------------------------------------------------------------

    def cell(self, cell_id: str) -> CellRecord:
        try:
            return self._by_id[cell_id]
        except KeyError:
            raise KeyError(f"unknown cell id {cell_id!r}") from None

    def has_cell(self, cell_id: str) -> bool:
        return cell_id in self._by_id

    def neighbors(self, cell_id: str) -> tuple[str, ...]:
        if cell_id not in self._adjacency:
            raise KeyError(f"unknown cell id {cell_id!r}")
        return self._adjacency[cell_id]

    def edge_kind(self, a: str, b: str) -> str | None:
        return self._edge_kinds.get((min(a, b), max(a, b)))

    @property
    def edges(self) -> tuple[tuple[str, str, str], ...]:
        return tuple(sorted((a, b, k) for (a, b), k in self._edge_kinds.items()))

    @property
    def cell_ids(self) -> tuple[str, ...]:
        return tuple(c.cell_id for c in self.cells)

    @property
    def lte_count(self) -> int:
        return sum(1 for c in self.cells if c.technology == "LTE")

    @property
    def nr_count(self) -> int:
        return sum(1 for c in self.cells if c.technology == "NR")

    def to_json(self) -> dict:
        return {
            "schema": self.schema.to_json(),
            "cells": [
                {
                    "cell_id": c.cell_id,
                    "node_id": c.node_id,
                    "technology": c.technology,
                    "predictors": dict(sorted(c.raw_predictors.items())),
                    "configs": dict(sorted(c.raw_configs.items())),
                }
                for c in self.cells
            ],
            "edges": [list(e) for e in self.edges],
        }


def load_network(path: str | Path) -> RanGraph:
    """Parse a network JSON file into a validated ``RanGraph``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise NetworkFormatError(f"{path}: cannot read network file: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(
            f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}"
        ) from exc
    return network_from_json(data, source=str(path))


def network_from_json(data: dict, source: str = "<memory>") -> RanGraph:
    for key in ("schema", "cells", "edges"):
        if key not in data:
            raise NetworkFormatError(f"{source}: missing top-level key {key!r}")
    schema = AttributeSchema.from_json(data["schema"])
    cells = []
    for i, item in enumerate(data["cells"]):
        try:
            cells.append(
                CellRecord(
                    cell_id=str(item["cell_id"]),
                    node_id=str(item["node_id"]),
                    technology=str(item["technology"]),
                    raw_predictors={k: float(v) for k, v in item["predictors"].items()},
                    raw_configs={k: float(v) for k, v in item["configs"].items()},
                )
            )
        except KeyError as exc:
            raise NetworkFormatError(f"{source}: cell entry {i}: missing field {exc}") from exc
    edges = []
    for i, item in enumerate(data["edges"]):
        if len(item) != 3:
            raise NetworkFormatError(
                f"{source}: edge entry {i}: expected [cell_id, cell_id, kind]"
            )
        edges.append((str(item[0]), str(item[1]), str(item[2])))
    return RanGraph(schema=schema, cells=cells, edges=edges)


# ---------------------------------------------------------------------------
# Normalization


@dataclass(frozen=True)
class SlotStats:
    minimum: float
    maximum: float
    observed: tuple[float, ...] = ()  # sorted training values, kept for discrete slots

    def normalize(self, value: float) -> float:
        if self.maximum == self.minimum:
            return 0.0  # constant feature carries no information
        return float(np.clip((value - self.minimum) / (self.maximum - self.minimum), 0.0, 1.0))

    def denormalize(self, value: float) -> float:
        return self.minimum + value * (self.maximum - self.minimum)


@dataclass(frozen=True)
class NormalizationStats:
    """Per-slot min/max fitted on training cells only, in layout order."""

    predictor: tuple[SlotStats, ...]
    config: tuple[SlotStats, ...]

    def slots(self, role: str) -> tuple[SlotStats, ...]:
        return self.predictor if role == "predictor" else self.config

    def to_json(self) -> dict:
        def dump(slots: tuple[SlotStats, ...]) -> list[dict]:
            return [
                {
                    "min": s.minimum,
                    "max": s.maximum,
                    **({"observed": list(s.observed)} if s.observed else {}),
                }
                for s in slots
            ]

        return {"predictor": dump(self.predictor), "config": dump(self.config)}

    @classmethod
    def from_json(cls, data: dict) -> "NormalizationStats":
        def parse(items: list[dict]) -> tuple[SlotStats, ...]:
            return tuple(
                SlotStats(
                    minimum=float(s["min"]),
                    maximum=float(s["max"]),
                    observed=tuple(float(v) for v in s.get("observed", ())),
                )
                for s in items
            )

        return cls(predictor=parse(data["predictor"]), config=parse(data["config"]))


def fit_normalization(graph: RanGraph, train_ids: Iterable[str]) -> NormalizationStats:
    """Fit per-attribute min/max over the given training cells.

    Observed values are recorded for discrete attributes so recommendations
    can be snapped back to settable values. Raises if an attribute is never
    observed on any training cell.
    """
    ids = list(train_ids)
    if not ids:
        raise ValueError("train_ids must be non-empty")
    train_cells = [graph.cell(cid) for cid in ids]

    def fit_role(role: str) -> tuple[SlotStats, ...]:
        slots = []
        for spec in graph.schema.layout(role):
            values = [
                cell.raw_values(role)[spec.name]
                for cell in train_cells
                if cell.technology == spec.technology
            ]
            if not values:
                raise ValueError(
                    f"attribute {spec.name!r} ({spec.technology} {role}) was never "
                    "observed on a training cell"
                )
            observed = tuple(sorted(set(values))) if spec.kind == "discrete" else ()
            slots.append(SlotStats(min(values), max(values), observed))
        return tuple(slots)

    return NormalizationStats(predictor=fit_role("predictor"), config=fit_role("config"))


@dataclass(frozen=True)
class FeatureVectors:
    """Normalized predictor vector ``x`` and config vector ``y`` in [0, 1]."""

    x: np.ndarray
    y: np.ndarray


def _vectorize_role(
    cell: CellRecord, slots: tuple[SlotStats, ...], layout: tuple[AttributeSpec, ...]
) -> np.ndarray:
    out = np.zeros(len(layout))
    raw = cell.raw_values(layout[0].role) if layout else {}
    for i, (spec, stats) in enumerate(zip(layout, slots)):
        if spec.technology != cell.technology:
            continue  # other-technology slot imputed as 0
        value = raw.get(spec.name)
        if value is not None:
            out[i] = stats.normalize(value)
    return out


def vectorize(
    cell: CellRecord, stats: NormalizationStats, schema: AttributeSchema
) -> FeatureVectors:
    """Map a cell's raw values into normalized, zero-imputed vectors."""
    x = _vectorize_role(cell, stats.predictor, schema.predictor_layout)
    y = _vectorize_role(cell, stats.config, schema.config_layout)
    x.flags.writeable = False
    y.flags.writeable = False
    return FeatureVectors(x=x, y=y)


def denormalize(
    y_hat: np.ndarray, stats: NormalizationStats, schema: AttributeSchema
) -> dict[str, float]:
    """Invert normalization per config attribute; snap discrete values.

    Keys are ``"<technology>.<name>"``. Discrete attributes map to the
    nearest observed training value (ties resolve to the smaller value).
    """
    layout = schema.config_layout
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y_hat.shape[0] != len(layout):
        raise ValueError(f"expected config vector of length {len(layout)}, got {y_hat.shape[0]}")
    out: dict[str, float] = {}
    for value, spec, slot in zip(y_hat, layout, stats.config):
        raw = slot.denormalize(float(value))
        if spec.kind == "discrete" and slot.observed:
            raw = min(slot.observed, key=lambda v: (abs(v - raw), v))
        out[f"{spec.technology}.{spec.name}"] = float(raw)
    return out


def feature_map(
    graph: RanGraph, stats: NormalizationStats
) -> dict[str, FeatureVectors]:
    """Vectorize every cell of the graph with the given statistics."""
    return {c.cell_id: vectorize(c, stats, graph.schema) for c in graph.cells}


def extend_network(
    graph: RanGraph,
    new_cells: Iterable[CellRecord],
    new_edges: Iterable[tuple[str, str, str]] = (),
) -> RanGraph:
    """A new graph with extra cells and edges; the original is untouched."""
    return RanGraph(
        schema=graph.schema,
        cells=(*graph.cells, *new_cells),
        edges=(*graph.edges, *new_edges),
    )


def parse_cells_payload(
    data: dict, source: str = "<memory>"
) -> tuple[list[CellRecord], list[tuple[str, str, str]]]:
    """Parse a standalone ``{"cells": [...], "edges": [...]}`` payload.

    Used for cells joining an existing network; configs may be omitted.
    """
    if "cells" not in data:
        raise NetworkFormatError(f"{source}: missing top-level key 'cells'")
    cells = []
    for i, item in enumerate(data["cells"]):
        try:
            cells.append(
                CellRecord(
                    cell_id=str(item["cell_id"]),
                    node_id=str(item["node_id"]),
                    technology=str(item["technology"]),
                    raw_predictors={k: float(v) for k, v in item["predictors"].items()},
                    raw_configs={k: float(v) for k, v in item.get("configs", {}).items()},
                )
            )
        except KeyError as exc:
            raise NetworkFormatError(f"{source}: cell entry {i}: missing field {exc}") from exc
    edges = []
    for i, item in enumerate(data.get("edges", [])):
        if len(item) != 3:
            raise NetworkFormatError(
                f"{source}: edge entry {i}: expected [cell_id, cell_id, kind]"
            )
        edges.append((str(item[0]), str(item[1]), str(item[2])))
    return cells, edges
