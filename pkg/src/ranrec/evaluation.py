"""Model comparison, projection, and deployment-scenario harnesses.

Accuracy is the mean cosine similarity between true and recommended
configuration vectors. Comparisons cover three models over the same
network: the contrastive twin encoder, the auto-encoder baseline, and the
untrained (freshly initialized) encoder. Scenario harnesses replay the
three deployment situations - adding cells to existing nodes, standing up
whole new nodes, and corrupting live cells - against generator ground
truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .anomaly import fit_forest, score_network, store_matrix
from .autodiff import cosine
from .config import RunConfig
from .gnn import GatStack, init_encoder
from .graph import (
    AttributeSchema,
    NormalizationStats,
    RanGraph,
    denormalize,
    extend_network,
    feature_map,
    fit_normalization,
)
from .inference import (
    EmbeddingStore,
    distance_set,
    embed_new_cell,
    recommend_closest,
    recommend_majority,
)
from .sampler import DatasetEntry, build_dataset, sample_subgraph, split_indices
from .synth import (
    GroundTruth,
    SynthSpec,
    corrupt_configs,
    synthesize_expansion,
    synthesize_greenfield,
)
from .training import TrainReport, encode_centers, train_gae, train_sgnn

MODELS = ("untrained", "gae", "sgnn")
SCENARIO_KINDS = ("expansion", "greenfield", "modification")


# ---------------------------------------------------------------------------
# Accuracy metric


@dataclass(frozen=True)
class AccuracyReport:
    model: str
    dataset: str  # "train" | "test" | scenario tag
    accuracy: float
    per_cell: tuple[tuple[str, float], ...]
    excluded: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "model": self.model,
            "dataset": self.dataset,
            "accuracy": self.accuracy,
            "per_cell": [[cid, value] for cid, value in self.per_cell],
            "excluded": list(self.excluded),
        }


def accuracy(
    truth: Sequence[np.ndarray],
    predicted: Sequence[np.ndarray],
    cell_ids: Sequence[str] | None = None,
    model: str = "",
    dataset: str = "",
) -> AccuracyReport:
    """Mean cosine similarity between paired vectors.

    Cells where either vector is zero are excluded from the mean and listed
    in the report rather than failing the whole evaluation.
    """
    if len(truth) != len(predicted):
        raise ValueError("truth and predicted must pair up")
    ids = list(cell_ids) if cell_ids is not None else [str(i) for i in range(len(truth))]
    per_cell: list[tuple[str, float]] = []
    excluded: list[str] = []
    for cid, y, y_hat in zip(ids, truth, predicted):
        y = np.asarray(y, dtype=np.float64)
        y_hat = np.asarray(y_hat, dtype=np.float64)
        if np.linalg.norm(y) == 0.0 or np.linalg.norm(y_hat) == 0.0:
            excluded.append(cid)
            continue
        per_cell.append((cid, cosine(y, y_hat)))
    mean = float(np.mean([v for _, v in per_cell])) if per_cell else 0.0
    return AccuracyReport(
        model=model,
        dataset=dataset,
        accuracy=mean,
        per_cell=tuple(per_cell),
        excluded=tuple(excluded),
    )


# ---------------------------------------------------------------------------
# PCA projection


@dataclass(frozen=True)
class Projection2D:
    components: np.ndarray  # (2, d), orthonormal rows
    explained_variance: tuple[float, float]
    points: np.ndarray  # (n, 2)


def pca_project(embeddings: np.ndarray) -> Projection2D:
    """Project onto the top-2 principal directions of the centered cloud.

    Component signs are canonical: the first coordinate of each component
    above 1e-12 in magnitude is positive.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3 or x.shape[1] < 2:
        raise ValueError(f"need at least 3 points of dimension >= 2, got {x.shape}")
    centered = x - x.mean(axis=0, keepdims=True)
    if not centered.any():
        raise ValueError("all points identical: projection undefined")
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2].copy()
    for row in components:
        nonzero = np.flatnonzero(np.abs(row) > 1e-12)
        if nonzero.size and row[nonzero[0]] < 0.0:
            row *= -1.0
    variances = (singular[:2] ** 2) / (x.shape[0] - 1)
    explained = (float(variances[0]), float(variances[1]) if variances.shape[0] > 1 else 0.0)
    return Projection2D(
        components=components,
        explained_variance=explained,
        points=centered @ components.T,
    )


# ---------------------------------------------------------------------------
# ROC-AUC (rank-based, average ranks on ties)


def roc_auc(labels: Sequence[bool], scores: Sequence[float]) -> float:
    labels_arr = np.asarray(labels, dtype=bool)
    scores_arr = np.asarray(scores, dtype=np.float64)
    pos = int(labels_arr.sum())
    neg = labels_arr.size - pos
    if pos == 0 or neg == 0:
        raise ValueError("ROC-AUC needs both positive and negative labels")
    order = np.argsort(scores_arr, kind="stable")
    ranks = np.empty(scores_arr.size)
    sorted_scores = scores_arr[order]
    i = 0
    while i < sorted_scores.size:
        j = i
        while j + 1 < sorted_scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_rank_sum = float(ranks[labels_arr].sum())
    return (pos_rank_sum - pos * (pos + 1) / 2.0) / (pos * neg)


# ---------------------------------------------------------------------------
# Retrieval evaluation and model comparison


def _nearest_config(
    store: EmbeddingStore, z: np.ndarray, exclude: str | None = None
) -> tuple[str, float, np.ndarray]:
    """Nearest stored record, optionally skipping one cell id (self-retrieval)."""
    for cid, dist in distance_set(store, z).entries:
        if cid != exclude:
            return cid, dist, store.record(cid).y
    raise ValueError("store exhausted while excluding the query cell")


def _store_from_entries(
    encoder: GatStack, entries: Sequence[DatasetEntry]
) -> tuple[EmbeddingStore, dict[str, np.ndarray]]:
    store = EmbeddingStore(encoder)
    embeddings: dict[str, np.ndarray] = {}
    rows = encode_centers(encoder, entries)
    for entry, z in zip(entries, rows):
        store.add(entry.subgraph.center, z, entry.target)
        embeddings[entry.subgraph.center] = z
    return store, embeddings


def retrieval_reports(
    encoder: GatStack,
    model: str,
    train_entries: Sequence[DatasetEntry],
    test_entries: Sequence[DatasetEntry],
) -> tuple[AccuracyReport, AccuracyReport]:
    """Train (leave-one-out) and test accuracy of nearest-record retrieval."""
    store, train_z = _store_from_entries(encoder, train_entries)
    truth: list[np.ndarray] = []
    predicted: list[np.ndarray] = []
    ids: list[str] = []
    for entry in train_entries:
        cid = entry.subgraph.center
        _, _, y_hat = _nearest_config(store, train_z[cid], exclude=cid)
        ids.append(cid)
        truth.append(entry.target)
        predicted.append(y_hat)
    train_report = accuracy(truth, predicted, ids, model=model, dataset="train")

    truth, predicted, ids = [], [], []
    test_z = encode_centers(encoder, test_entries)
    for entry, z in zip(test_entries, test_z):
        _, _, y_hat = _nearest_config(store, z)
        ids.append(entry.subgraph.center)
        truth.append(entry.target)
        predicted.append(y_hat)
    test_report = accuracy(truth, predicted, ids, model=model, dataset="test")
    return train_report, test_report


@dataclass
class ModelEvaluation:
    model: str
    train: AccuracyReport
    test: AccuracyReport
    projection: Projection2D
    projection_ids: tuple[str, ...]
    encoder: GatStack
    train_report: TrainReport | None = None


@dataclass
class ComparisonResult:
    models: list[ModelEvaluation]
    network_label: str = "synthetic"

    def rows(self) -> list[tuple[str, str, str, float]]:
        out = []
        for ev in self.models:
            out.append((ev.model, self.network_label, "train", ev.train.accuracy))
            out.append((ev.model, self.network_label, "test", ev.test.accuracy))
        return out

    def by_model(self, model: str) -> ModelEvaluation:
        return next(ev for ev in self.models if ev.model == model)


@dataclass
class PreparedData:
    stats: NormalizationStats
    dataset: list[DatasetEntry]
    train_entries: list[DatasetEntry]
    test_entries: list[DatasetEntry]
    train_ids: list[str]


def prepare_data(graph: RanGraph, config: RunConfig) -> PreparedData:
    """Split cells, fit normalization on the training side only, sample subgraphs."""
    train_idx, test_idx = split_indices(len(graph.cells), config.test_fraction, config.seed)
    train_ids = [graph.cells[i].cell_id for i in train_idx]
    stats = fit_normalization(graph, train_ids)
    dataset = build_dataset(graph, stats, config.sampler())
    return PreparedData(
        stats=stats,
        dataset=dataset,
        train_entries=[dataset[i] for i in train_idx],
        test_entries=[dataset[i] for i in test_idx],
        train_ids=train_ids,
    )


def _train_provider(graph: RanGraph, config: RunConfig, data: PreparedData):
    """Per-epoch resampled train entries, when the config asks for them."""
    if not config.resample_per_epoch:
        return None
    sampler_cfg = config.sampler()
    train_set = set(data.train_ids)

    def provider(epoch: int):
        resampled = build_dataset(graph, data.stats, sampler_cfg, epoch=epoch)
        return [e for e in resampled if e.subgraph.center in train_set]

    return provider


def compare_models(graph: RanGraph, config: RunConfig) -> ComparisonResult:
    """Train the baseline trio and report train/test retrieval accuracy.

    The untrained row is the contrastive architecture at initialization with
    zero optimization steps.
    """
    data = prepare_data(graph, config)
    arch = config.arch(graph.schema.predictor_dim)
    provider = _train_provider(graph, config, data)

    encoders: dict[str, GatStack] = {"untrained": init_encoder(arch, config.seed)}
    reports: dict[str, TrainReport | None] = {"untrained": None}
    encoders["sgnn"], reports["sgnn"] = train_sgnn(
        data.train_entries, arch, config.training, provider
    )
    encoders["gae"], _, reports["gae"] = train_gae(
        data.train_entries, arch, config.training, provider
    )

    models = []
    all_ids = tuple(e.subgraph.center for e in data.dataset)
    for model in MODELS:
        encoder = encoders[model]
        train_report, test_report = retrieval_reports(
            encoder, model, data.train_entries, data.test_entries
        )
        all_embeddings = encode_centers(encoder, data.dataset)
        models.append(
            ModelEvaluation(
                model=model,
                train=train_report,
                test=test_report,
                projection=pca_project(all_embeddings),
                projection_ids=all_ids,
                encoder=encoder,
                train_report=reports[model],
            )
        )
    return ComparisonResult(models=models)


# ---------------------------------------------------------------------------
# Deployment scenarios


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    count: int = 10
    corruption_magnitude: float = 5.0
    mode: str = "closest"
    k: int = 5
    threshold: float = 0.6
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"kind must be one of {SCENARIO_KINDS}")
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if self.kind == "modification" and self.corruption_magnitude <= 0.0:
            raise ValueError("corruption magnitude must be positive")


@dataclass
class DeploymentArtifacts:
    """A trained deployment over the full network: encoder plus full store."""

    graph: RanGraph
    truth: GroundTruth
    synth_spec: SynthSpec
    config: RunConfig
    stats: NormalizationStats
    encoder: GatStack
    store: EmbeddingStore
    dataset: list[DatasetEntry]

    @classmethod
    def build(
        cls,
        graph: RanGraph,
        truth: GroundTruth,
        synth_spec: SynthSpec,
        config: RunConfig,
    ) -> "DeploymentArtifacts":
        stats = fit_normalization(graph, graph.cell_ids)
        dataset = build_dataset(graph, stats, config.sampler())
        encoder, _ = train_sgnn(dataset, config.arch(graph.schema.predictor_dim), config.training)
        store, _ = _store_from_entries(encoder, dataset)
        return cls(
            graph=graph,
            truth=truth,
            synth_spec=synth_spec,
            config=config,
            stats=stats,
            encoder=encoder,
            store=store,
            dataset=dataset,
        )


def _normalized_clean_config(
    schema: AttributeSchema,
    stats: NormalizationStats,
    technology: str,
    clean_raw: dict,
) -> np.ndarray:
    out = np.zeros(schema.config_dim)
    for i, (spec, slot) in enumerate(zip(schema.config_layout, stats.config)):
        if spec.technology == technology:
            out[i] = slot.normalize(float(clean_raw[spec.name]))
    return out


@dataclass
class ScenarioReport:
    kind: str
    accuracy: AccuracyReport | None = None
    recommendations: list[dict] | None = None
    auc: float | None = None
    flagged: tuple[str, ...] = ()
    corrupted: tuple[str, ...] = ()
    corrections: list[dict] | None = None

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "accuracy": self.accuracy.to_json() if self.accuracy else None,
            "recommendations": self.recommendations,
            "auc": self.auc,
            "flagged": list(self.flagged),
            "corrupted": list(self.corrupted),
            "corrections": self.corrections,
        }


def _clone_store(store: EmbeddingStore) -> EmbeddingStore:
    return EmbeddingStore(store.encoder, store.records)


def _recommend_for_new_cells(
    artifacts: DeploymentArtifacts,
    scenario: ScenarioSpec,
    new_cells,
    new_edges,
    new_truth,
) -> ScenarioReport:
    augmented = extend_network(artifacts.graph, new_cells, new_edges)
    features = feature_map(augmented, artifacts.stats)
    schema = artifacts.graph.schema
    sampler_cfg = artifacts.config.sampler()
    # Grows a private copy: deployment artifacts stay frozen for reruns.
    store = _clone_store(artifacts.store)
    truth_vecs: list[np.ndarray] = []
    predicted: list[np.ndarray] = []
    ids: list[str] = []
    recommendations: list[dict] = []
    for cell in new_cells:
        sub = sample_subgraph(augmented, cell.cell_id, sampler_cfg, features)
        z = embed_new_cell(store, sub)
        if scenario.mode == "majority":
            rec = recommend_majority(store, z, scenario.k, schema)
        else:
            rec = recommend_closest(store, z)
        clean_vec = _normalized_clean_config(
            schema, artifacts.stats, cell.technology, dict(new_truth[cell.cell_id].clean_configs)
        )
        ids.append(cell.cell_id)
        truth_vecs.append(clean_vec)
        predicted.append(rec.y_hat)
        recommendations.append(
            {
                "cell_id": cell.cell_id,
                "mode": rec.mode,
                "y_hat": denormalize(rec.y_hat, artifacts.stats, schema),
                "sources": [{"cell_id": cid, "distance": d} for cid, d in rec.sources],
            }
        )
        store.add(cell.cell_id, z, rec.y_hat)
    report = ScenarioReport(kind=scenario.kind, recommendations=recommendations)
    if ids:
        report.accuracy = accuracy(truth_vecs, predicted, ids, model="sgnn", dataset=scenario.kind)
    return report


def _run_modification(artifacts: DeploymentArtifacts, scenario: ScenarioSpec) -> ScenarioReport:
    corrupted_graph, corrupted_ids = corrupt_configs(
        artifacts.graph,
        artifacts.truth,
        scenario.count,
        scenario.corruption_magnitude,
        scenario.seed,
    )
    # Predictors are untouched, so embeddings carry over; configs re-vectorize.
    corrupted_features = feature_map(corrupted_graph, artifacts.stats)
    store = EmbeddingStore(artifacts.encoder)
    for record in artifacts.store.records:
        store.add(record.cell_id, record.z, corrupted_features[record.cell_id].y)
    report = ScenarioReport(kind=scenario.kind, corrupted=corrupted_ids)
    if not corrupted_ids:
        return report
    config = artifacts.config
    psi = config.forest_subsample or min(256, len(store))
    forest = fit_forest(
        store_matrix(store, include_configs=True),
        t=config.forest_trees,
        psi=psi,
        seed=scenario.seed,
    )
    anomaly_report = score_network(store, forest, scenario.threshold, include_configs=True)
    scores = dict(anomaly_report.cells)
    labels = [cid in corrupted_ids for cid, _ in anomaly_report.cells]
    report.auc = roc_auc(labels, [s for _, s in anomaly_report.cells])
    report.flagged = tuple(anomaly_report.flagged)
    corrections = []
    for cid in anomaly_report.flagged:
        record = store.record(cid)
        _, _, y_hat = _nearest_config(store, record.z, exclude=cid)
        corrections.append(
            {
                "cell_id": cid,
                "score": scores[cid],
                "proposed": denormalize(y_hat, artifacts.stats, artifacts.graph.schema),
            }
        )
    report.corrections = corrections
    return report


def run_scenario(scenario: ScenarioSpec, artifacts: DeploymentArtifacts) -> ScenarioReport:
    """Execute one deployment scenario against trained artifacts."""
    if scenario.kind == "expansion":
        new_cells, new_edges, new_truth = synthesize_expansion(
            artifacts.graph, artifacts.truth, artifacts.synth_spec, scenario.count, scenario.seed
        )
        return _recommend_for_new_cells(artifacts, scenario, new_cells, new_edges, new_truth)
    if scenario.kind == "greenfield":
        new_cells, new_edges, new_truth = synthesize_greenfield(
            artifacts.graph, artifacts.truth, artifacts.synth_spec, scenario.count, scenario.seed
        )
        return _recommend_for_new_cells(artifacts, scenario, new_cells, new_edges, new_truth)
    return _run_modification(artifacts, scenario)
