"""Deterministic synthetic radio-network generator.

Sites are placed on a plane and assigned a context archetype (dense urban /
suburban / rural style clusters). Each site hosts a fixed cell pattern over
both technologies. Predictors are drawn from the archetype (bandwidth
class, channel band, plus an uninformative azimuth); clean configurations
are a fixed function of the archetype and the in-band channel offset, so
nearest-neighbor retrieval in context space is learnable by construction.
Observed configurations add bounded gaussian noise; a chosen fraction of
cells additionally receives large offsets on two of their config
attributes and is flagged as misconfigured in the ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .autodiff import cosine
from .graph import AttributeSchema, AttributeSpec, CellRecord, RanGraph
from .rng import substream

CORNER_HIGH = 0.82
CORNER_LOW = 0.08
BANDWIDTH_JITTER = 0.25  # chance a cell deviates from its cluster's bandwidth class


@dataclass(frozen=True)
class _PredictorDesign:
    name: str
    kind: str


@dataclass(frozen=True)
class _ConfigDesign:
    name: str
    kind: str
    aggregation: str
    low: float
    high: float
    grid: int | None = None  # discrete step count over [low, high]

    def to_raw(self, v: float) -> float:
        return self.low + v * (self.high - self.low)

    def snap(self, v: float) -> float:
        if self.grid is None:
            return v
        return round(v * self.grid) / self.grid


_TECH_DESIGN: dict[str, dict] = {
    "LTE": {
        "bandwidth": ("lteBandwidthMhz", (5.0, 10.0, 15.0, 20.0)),
        "channel": ("lteChannelNumber", 500.0, 1000.0, 120.0),
        "azimuth": "lteAntennaAzimuth",
        "configs": (
            _ConfigDesign("ltePowerTarget", "continuous", "median", -120.0, -80.0),
            _ConfigDesign("ltePreamblePower", "discrete", "mode", -130.0, -90.0, grid=20),
            _ConfigDesign("lteHandoverMargin", "continuous", "mean", 0.0, 10.0),
        ),
    },
    "NR": {
        "bandwidth": ("nrBandwidthMhz", (20.0, 50.0, 80.0, 100.0)),
        "channel": ("nrChannelNumber", 150000.0, 100000.0, 12000.0),
        "azimuth": "nrAntennaAzimuth",
        "configs": (
            _ConfigDesign("nrPowerTarget", "continuous", "median", -110.0, -70.0),
            _ConfigDesign("nrPreamblePower", "discrete", "mode", -120.0, -80.0, grid=20),
            _ConfigDesign("nrHandoverMargin", "continuous", "mean", 0.0, 15.0),
        ),
    },
}


def default_schema() -> AttributeSchema:
    entries: list[AttributeSpec] = []
    for tech, design in _TECH_DESIGN.items():
        bw_name, _ = design["bandwidth"]
        ch_name = design["channel"][0]
        entries.append(AttributeSpec(bw_name, tech, "predictor", "discrete"))
        entries.append(AttributeSpec(ch_name, tech, "predictor", "continuous"))
        entries.append(AttributeSpec(design["azimuth"], tech, "predictor", "continuous"))
        for cfg in design["configs"]:
            entries.append(AttributeSpec(cfg.name, tech, "config", cfg.kind, cfg.aggregation))
    return AttributeSchema(entries=tuple(entries))


@dataclass(frozen=True)
class SynthSpec:
    sites: int = 50
    cells_per_site: int = 6
    lte_ratio: int = 2
    nr_ratio: int = 1
    context_clusters: int = 3
    config_noise: float = 0.02
    misconfig_rate: float = 0.05
    misconfig_magnitude: float = 5.0
    inter_site_degree: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("sites", "cells_per_site", "context_clusters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lte_ratio < 0 or self.nr_ratio < 0 or self.lte_ratio + self.nr_ratio == 0:
            raise ValueError("technology ratio must have a positive total")
        if not 0.0 <= self.misconfig_rate <= 1.0:
            raise ValueError("misconfig_rate must be in [0, 1]")
        if self.config_noise < 0.0:
            raise ValueError("config_noise must be >= 0")
        if self.inter_site_degree < 0:
            raise ValueError("inter_site_degree must be >= 0")
        if self.sites > 1 and self.inter_site_degree > self.sites - 1:
            raise ValueError(
                f"inter_site_degree={self.inter_site_degree} is infeasible for "
                f"{self.sites} sites"
            )

    @property
    def total_cells(self) -> int:
        return self.sites * self.cells_per_site

    def to_json(self) -> dict:
        return {
            "sites": self.sites,
            "cells_per_site": self.cells_per_site,
            "lte_ratio": self.lte_ratio,
            "nr_ratio": self.nr_ratio,
            "context_clusters": self.context_clusters,
            "config_noise": self.config_noise,
            "misconfig_rate": self.misconfig_rate,
            "misconfig_magnitude": self.misconfig_magnitude,
            "inter_site_degree": self.inter_site_degree,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SynthSpec":
        return cls(**data)


@dataclass(frozen=True)
class CellTruth:
    cluster: int
    clean_configs: Mapping[str, float]  # raw units, before noise and corruption
    corrupted: bool


@dataclass(frozen=True)
class GroundTruth:
    cells: dict[str, CellTruth]

    @property
    def corrupted_ids(self) -> tuple[str, ...]:
        return tuple(sorted(cid for cid, t in self.cells.items() if t.corrupted))

    def to_json(self) -> dict:
        return {
            cid: {
                "cluster": t.cluster,
                "corrupted": t.corrupted,
                "clean_configs": dict(sorted(t.clean_configs.items())),
            }
            for cid, t in sorted(self.cells.items())
        }

    @classmethod
    def from_json(cls, data: dict) -> "GroundTruth":
        return cls(
            cells={
                cid: CellTruth(
                    cluster=int(item["cluster"]),
                    clean_configs={k: float(v) for k, v in item["clean_configs"].items()},
                    corrupted=bool(item["corrupted"]),
                )
                for cid, item in data.items()
            }
        )


# ---------------------------------------------------------------------------
# Generation internals


def _tech_pattern(spec: SynthSpec) -> list[str]:
    unit = ["LTE"] * spec.lte_ratio + ["NR"] * spec.nr_ratio
    return [unit[i % len(unit)] for i in range(spec.cells_per_site)]


def _site_positions(spec: SynthSpec) -> np.ndarray:
    rng = substream(spec.seed, "sites")
    return rng.uniform(0.0, 100.0, size=(spec.sites, 2))


def _site_clusters(spec: SynthSpec) -> np.ndarray:
    rng = substream(spec.seed, "clusters")
    return rng.integers(0, spec.context_clusters, size=spec.sites)


def _clean_profile(cluster: int, n_cfg: int) -> np.ndarray:
    """Normalized clean config values: one archetype corner per cluster.

    Constant within a cluster, so the cluster-mean predictor is exact on
    noise-free data; archetype corners are near-orthogonal across clusters.
    """
    profile = np.full(n_cfg, CORNER_LOW)
    profile[cluster % n_cfg] = CORNER_HIGH
    return profile


def _make_cell(
    cell_id: str,
    node_id: str,
    tech: str,
    cluster: int,
    rng: np.random.Generator,
    config_noise: float,
    with_configs: bool = True,
) -> tuple[CellRecord, dict[str, float]]:
    """Draw one cell's predictors and configs; returns (record, clean raw configs)."""
    design = _TECH_DESIGN[tech]
    bw_name, bw_values = design["bandwidth"]
    ch_name, ch_base, ch_step, ch_jitter = design["channel"]

    if rng.random() < BANDWIDTH_JITTER:
        bandwidth = bw_values[rng.integers(len(bw_values))]
    else:
        bandwidth = bw_values[(len(bw_values) - 1 - cluster) % len(bw_values)]
    center = ch_base + ch_step * cluster
    offset = rng.uniform(-1.0, 1.0)
    channel = center + ch_jitter * offset
    azimuth = rng.uniform(0.0, 360.0)
    predictors = {bw_name: float(bandwidth), ch_name: float(channel), design["azimuth"]: float(azimuth)}

    configs_design: tuple[_ConfigDesign, ...] = design["configs"]
    clean_norm = _clean_profile(cluster, len(configs_design))
    clean_raw = {
        cfg.name: cfg.to_raw(cfg.snap(v)) for cfg, v in zip(configs_design, clean_norm)
    }
    observed: dict[str, float] = {}
    if with_configs:
        noise = rng.normal(0.0, config_noise, size=len(configs_design)) if config_noise > 0 else np.zeros(len(configs_design))
        for cfg, v, eps in zip(configs_design, clean_norm, noise):
            observed[cfg.name] = cfg.to_raw(cfg.snap(float(np.clip(v + eps, 0.0, 1.0))))
    record = CellRecord(
        cell_id=cell_id,
        node_id=node_id,
        technology=tech,
        raw_predictors=predictors,
        raw_configs=observed,
    )
    return record, clean_raw


def _nearest_sites(positions: np.ndarray, index: int, count: int) -> list[int]:
    dists = np.linalg.norm(positions - positions[index], axis=1)
    order = sorted(range(len(positions)), key=lambda j: (dists[j], j))
    return [j for j in order if j != index][:count]


def generate(spec: SynthSpec) -> tuple[RanGraph, GroundTruth]:
    """Build the synthetic network and its generation-time ground truth.

    Fully deterministic per spec: sites use independent substreams, and
    corruption applies large positive raw offsets to two config attributes
    of each selected cell.
    """
    pattern = _tech_pattern(spec)
    positions = _site_positions(spec)
    clusters = _site_clusters(spec)

    records: list[CellRecord] = []
    clean: dict[str, dict[str, float]] = {}
    cell_cluster: dict[str, int] = {}
    for s in range(spec.sites):
        rng = substream(spec.seed, "site", s)
        node_id = f"N{s:03d}"
        for c, tech in enumerate(pattern):
            cell_id = f"S{s:03d}C{c}"
            record, clean_raw = _make_cell(
                cell_id, node_id, tech, int(clusters[s]), rng, spec.config_noise
            )
            records.append(record)
            clean[cell_id] = clean_raw
            cell_cluster[cell_id] = int(clusters[s])

    # Misconfiguration injection: exact count, two attributes per cell.
    all_ids = [r.cell_id for r in records]
    n_corrupt = int(round(spec.misconfig_rate * len(all_ids)))
    corrupt_rng = substream(spec.seed, "corrupt")
    corrupted_ids = set()
    if n_corrupt > 0:
        picks = corrupt_rng.choice(len(all_ids), size=n_corrupt, replace=False)
        corrupted_ids = {all_ids[i] for i in picks}
    by_id = {r.cell_id: r for r in records}
    for cid in sorted(corrupted_ids):
        by_id[cid] = _apply_corruption(
            by_id[cid], spec.misconfig_magnitude, substream(spec.seed, "corrupt", cid)
        )
    records = [by_id[r.cell_id] for r in records]

    edges = _inter_site_edges(spec, positions, pattern)
    graph = RanGraph(schema=default_schema(), cells=records, edges=edges)
    truth = GroundTruth(
        cells={
            cid: CellTruth(
                cluster=cell_cluster[cid],
                clean_configs=clean[cid],
                corrupted=cid in corrupted_ids,
            )
            for cid in all_ids
        }
    )
    return graph, truth


def _apply_corruption(
    record: CellRecord, magnitude: float, rng: np.random.Generator
) -> CellRecord:
    designs = _TECH_DESIGN[record.technology]["configs"]
    picks = rng.choice(len(designs), size=min(2, len(designs)), replace=False)
    configs = dict(record.raw_configs)
    for i in sorted(int(p) for p in picks):
        cfg = designs[i]
        configs[cfg.name] = configs[cfg.name] + magnitude * (cfg.high - cfg.low)
    return CellRecord(
        cell_id=record.cell_id,
        node_id=record.node_id,
        technology=record.technology,
        raw_predictors=record.raw_predictors,
        raw_configs=configs,
    )


def _inter_site_edges(
    spec: SynthSpec, positions: np.ndarray, pattern: list[str]
) -> list[tuple[str, str, str]]:
    if spec.sites == 1 or spec.inter_site_degree == 0:
        return []
    edges: set[tuple[str, str]] = set()
    for s in range(spec.sites):
        for other in _nearest_sites(positions, s, spec.inter_site_degree):
            for c in range(spec.cells_per_site):
                a = f"S{s:03d}C{c}"
                b = f"S{other:03d}C{c}"
                edges.add((min(a, b), max(a, b)))
    return [(a, b, "inter_node") for a, b in sorted(edges)]


# ---------------------------------------------------------------------------
# Learnability diagnostic


@dataclass(frozen=True)
class LearnabilityReport:
    oracle_accuracy: float
    learnable: bool
    threshold: float = 0.98


def _design_space_config(cell: CellRecord) -> np.ndarray:
    """Observed configs mapped into the generator's [0, 1] design profile."""
    designs: tuple[_ConfigDesign, ...] = _TECH_DESIGN[cell.technology]["configs"]
    return np.array(
        [(cell.raw_configs[c.name] - c.low) / (c.high - c.low) for c in designs]
    )


def learnability_check(graph: RanGraph, truth: GroundTruth) -> LearnabilityReport:
    """Score the trivial archetype-mean predictor against observed configs.

    Predicts every non-corrupted cell's configuration by the mean observed
    configuration of its (cluster, technology) group, in the generator's
    design profile space; high cosine accuracy means configurations are
    recoverable from context at all.
    """
    clean_ids = [cid for cid in graph.cell_ids if not truth.cells[cid].corrupted]
    vectors = {cid: _design_space_config(graph.cell(cid)) for cid in clean_ids}
    groups: dict[tuple[int, str], list[str]] = {}
    for cid in clean_ids:
        key = (truth.cells[cid].cluster, graph.cell(cid).technology)
        groups.setdefault(key, []).append(cid)
    means = {key: np.mean([vectors[cid] for cid in ids], axis=0) for key, ids in groups.items()}

    cosines = []
    for cid in clean_ids:
        key = (truth.cells[cid].cluster, graph.cell(cid).technology)
        y = vectors[cid]
        if np.linalg.norm(y) == 0.0 or np.linalg.norm(means[key]) == 0.0:
            continue
        cosines.append(cosine(y, means[key]))
    accuracy = float(np.mean(cosines)) if cosines else 0.0
    return LearnabilityReport(oracle_accuracy=accuracy, learnable=accuracy >= 0.98)


# ---------------------------------------------------------------------------
# Scenario synthesis: cells and sites joining an existing synthetic network


def synthesize_expansion(
    graph: RanGraph, truth: GroundTruth, spec: SynthSpec, count: int, seed: int
) -> tuple[list[CellRecord], list[tuple[str, str, str]], dict[str, CellTruth]]:
    """New cells on existing radio nodes (no explicit new edges needed:
    intra-node edges materialize automatically)."""
    clusters = _site_clusters(spec)
    rng = substream(seed, "expansion")
    new_cells: list[CellRecord] = []
    new_truth: dict[str, CellTruth] = {}
    pattern = _tech_pattern(spec)
    for i in range(count):
        s = int(rng.integers(spec.sites))
        tech = pattern[int(rng.integers(len(pattern)))]
        cell_id = f"EXP{i:03d}"
        record, clean_raw = _make_cell(
            cell_id, f"N{s:03d}", tech, int(clusters[s]), rng, spec.config_noise,
            with_configs=False,
        )
        new_cells.append(record)
        new_truth[cell_id] = CellTruth(
            cluster=int(clusters[s]), clean_configs=clean_raw, corrupted=False
        )
    return new_cells, [], new_truth


def synthesize_greenfield(
    graph: RanGraph,
    truth: GroundTruth,
    spec: SynthSpec,
    new_sites: int,
    seed: int,
) -> tuple[list[CellRecord], list[tuple[str, str, str]], dict[str, CellTruth]]:
    """Whole new radio nodes, attached to the network by inter-node edges only."""
    positions = _site_positions(spec)
    rng = substream(seed, "greenfield")
    pattern = _tech_pattern(spec)
    new_cells: list[CellRecord] = []
    new_truth: dict[str, CellTruth] = {}
    edges: list[tuple[str, str, str]] = []
    degree = min(spec.inter_site_degree, spec.sites)
    for i in range(new_sites):
        position = rng.uniform(0.0, 100.0, size=2)
        cluster = int(rng.integers(spec.context_clusters))
        node_id = f"GN{i:03d}"
        dists = np.linalg.norm(positions - position, axis=1)
        order = sorted(range(spec.sites), key=lambda j: (dists[j], j))[:degree]
        for c, tech in enumerate(pattern):
            cell_id = f"GF{i:03d}C{c}"
            record, clean_raw = _make_cell(
                cell_id, node_id, tech, cluster, rng, spec.config_noise, with_configs=False
            )
            new_cells.append(record)
            new_truth[cell_id] = CellTruth(
                cluster=cluster, clean_configs=clean_raw, corrupted=False
            )
            for s in order:
                edges.append((cell_id, f"S{s:03d}C{c}", "inter_node"))
    return new_cells, edges, new_truth


def corrupt_configs(
    graph: RanGraph, truth: GroundTruth, count: int, magnitude: float, seed: int
) -> tuple[RanGraph, tuple[str, ...]]:
    """Corrupt ``count`` previously-clean cells of an existing network."""
    candidates = [cid for cid in graph.cell_ids if not truth.cells[cid].corrupted]
    if count > len(candidates):
        raise ValueError(f"cannot corrupt {count} of {len(candidates)} clean cells")
    rng = substream(seed, "modify")
    picks = sorted(candidates[i] for i in rng.choice(len(candidates), size=count, replace=False))
    replacements = {
        cid: _apply_corruption(graph.cell(cid), magnitude, substream(seed, "modify", cid))
        for cid in picks
    }
    cells = [replacements.get(c.cell_id, c) for c in graph.cells]
    new_graph = RanGraph(schema=graph.schema, cells=cells, edges=graph.edges)
    return new_graph, tuple(picks)
