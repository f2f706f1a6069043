"""Training loops for the contrastive twin encoder and the auto-encoder.

Pair labels come from configuration similarity, ``c = 2 cos(y_a, y_b) - 1``
in [-1, 1]. The contrastive objective pulls label-similar embeddings
together and pushes dissimilar ones apart up to a margin:

    L = (1 + c)/2 * D + (1 - c)/2 * max(0, M - D),   D = ||z_a - z_b||_2

Pair mining keeps a configurable fraction of "ambiguous" pairs: nearer than
the median embedding distance yet dissimilar, or farther yet similar. The
auto-encoder baseline instead minimizes the mean per-vertex Euclidean
reconstruction error of its decoder. Both loops take one Adam step per
epoch on the full accumulated objective and are deterministic per seed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import Node, Parameter, Tape, cosine
from .gnn import (
    ArchConfig,
    GatStack,
    decode_group_on_tape,
    encode_group_on_tape,
    init_decoder,
    init_encoder,
)
from .rng import substream
from .sampler import DatasetEntry

logger = logging.getLogger(__name__)

LOSS_FORMS = ("standard", "printed")


@dataclass(frozen=True)
class PairSample:
    a: int
    b: int
    c: float  # similarity label in [-1, 1]


@dataclass(frozen=True)
class MiningConfig:
    enabled: bool = True
    hard_fraction: float = 0.5
    sim_high: float = 0.5
    sim_low: float = -0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.hard_fraction <= 1.0:
            raise ValueError("hard_fraction must be in [0, 1]")
        if self.sim_low >= self.sim_high:
            raise ValueError("sim_low must be below sim_high")


@dataclass(frozen=True)
class TrainingConfig:
    margin: float = 1.0
    pairs_per_epoch: int | None = None  # defaults to 10x the train size
    mining: MiningConfig = field(default_factory=MiningConfig)
    epochs: int = 200
    learning_rate: float = 1e-3
    seed: int = 0
    loss_form: str = "standard"

    def __post_init__(self) -> None:
        if self.margin <= 0.0:
            raise ValueError("margin must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.loss_form not in LOSS_FORMS:
            raise ValueError(f"loss_form must be one of {LOSS_FORMS}")


@dataclass
class TrainReport:
    epoch_losses: list[float]
    wall_time_s: float
    checkpoint_path: str | None = None

    def to_json(self) -> dict:
        return {
            "epoch_losses": self.epoch_losses,
            "wall_time_s": self.wall_time_s,
            "checkpoint_path": self.checkpoint_path,
        }


# ---------------------------------------------------------------------------
# Losses


def config_similarity(y_a: np.ndarray, y_b: np.ndarray) -> float:
    """Similarity label ``2 cos(y_a, y_b) - 1``; undefined for zero vectors."""
    return 2.0 * cosine(y_a, y_b) - 1.0


def contrastive_loss(
    c: float, z_a: np.ndarray, z_b: np.ndarray, margin: float, form: str = "standard"
) -> float:
    """Per-pair loss value for a similarity label and two embeddings.

    ``form="printed"`` selects the unbalanced variant
    ``(1 + c) D + (1 - c) max(0, M) - D`` kept for comparison runs.
    """
    if margin <= 0.0:
        raise ValueError("margin must be positive")
    d = float(np.linalg.norm(np.asarray(z_a, dtype=np.float64) - np.asarray(z_b, dtype=np.float64)))
    if form == "printed":
        return (1.0 + c) * d + (1.0 - c) * max(0.0, margin) - d
    return 0.5 * (1.0 + c) * d + 0.5 * (1.0 - c) * max(0.0, margin - d)


def reconstruction_loss(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Mean over vertices of the row-wise Euclidean reconstruction error."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    return float(np.linalg.norm(x - x_hat, axis=1).mean())


# ---------------------------------------------------------------------------
# Pair mining


def _similarity_matrix(targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise labels and a validity mask (zero config vectors rejected)."""
    norms = np.linalg.norm(targets, axis=1)
    valid = norms > 0.0
    safe = np.where(valid, norms, 1.0)
    unit = targets / safe[:, None]
    labels = np.clip(2.0 * (unit @ unit.T) - 1.0, -1.0, 1.0)
    return labels, valid


def mine_informative_pairs(
    embeddings: np.ndarray,
    targets: np.ndarray,
    cfg: TrainingConfig,
    rng: np.random.Generator,
) -> list[PairSample]:
    """Select ``pairs_per_epoch`` index pairs, a ``hard_fraction`` of them ambiguous.

    Ambiguous pairs sit below the median embedding distance with a label
    under ``sim_low`` (hard negatives) or above the median with a label over
    ``sim_high`` (hard positives). The remainder is uniform over the unpicked
    valid pairs. Output is in canonical (a, b) order.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = embeddings.shape[0]
    labels, valid = _similarity_matrix(targets)
    if int(valid.sum()) < 2:
        raise ValueError("pair mining needs at least 2 entries with nonzero targets")

    ii, jj = np.triu_indices(n, k=1)
    keep = valid[ii] & valid[jj]
    ii, jj = ii[keep], jj[keep]
    diffs = embeddings[ii] - embeddings[jj]
    dists = np.linalg.norm(diffs, axis=1)
    pair_labels = labels[ii, jj]

    total = ii.shape[0]
    budget = cfg.pairs_per_epoch if cfg.pairs_per_epoch is not None else 10 * n
    budget = min(budget, total)

    n_hard = 0
    hard_pick = np.empty(0, dtype=np.intp)
    if cfg.mining.enabled and cfg.mining.hard_fraction > 0.0:
        median = float(np.median(dists))
        hard = ((dists < median) & (pair_labels < cfg.mining.sim_low)) | (
            (dists > median) & (pair_labels > cfg.mining.sim_high)
        )
        hard_idx = np.flatnonzero(hard)
        n_hard = min(int(round(cfg.mining.hard_fraction * budget)), hard_idx.shape[0])
        if n_hard > 0:
            hard_pick = hard_idx[rng.choice(hard_idx.shape[0], size=n_hard, replace=False)]

    rest = np.setdiff1d(np.arange(total), hard_pick, assume_unique=False)
    n_rand = min(budget - n_hard, rest.shape[0])
    rand_pick = rest[rng.choice(rest.shape[0], size=n_rand, replace=False)] if n_rand else np.empty(0, dtype=np.intp)

    chosen = np.sort(np.concatenate([hard_pick, rand_pick]))
    return [
        PairSample(int(ii[k]), int(jj[k]), float(pair_labels[k])) for k in chosen
    ]


# ---------------------------------------------------------------------------
# Optimizer


class Adam:
    """Standard Adam over a fixed parameter list."""

    def __init__(
        self,
        params: Sequence[Parameter],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.params = list(params)
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        self.step_count += 1
        b1c = 1.0 - self.beta1**self.step_count
        b2c = 1.0 - self.beta2**self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value = p.value - self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


# ---------------------------------------------------------------------------
# Training loops


def pair_loss_on_tape(
    tape: Tape, z_all: Node, pairs: Sequence[PairSample], cfg: TrainingConfig
) -> Node:
    """Mean contrastive loss over the pair batch, built on the tape."""
    n = z_all.shape[0]
    k = len(pairs)
    sel_a = np.zeros((k, n))
    sel_b = np.zeros((k, n))
    c = np.empty((k, 1))
    for row, pair in enumerate(pairs):
        sel_a[row, pair.a] = 1.0
        sel_b[row, pair.b] = 1.0
        c[row, 0] = pair.c
    diff = tape.sub(tape.matmul(tape.const(sel_a), z_all), tape.matmul(tape.const(sel_b), z_all))
    d = tape.rownorm(diff)
    if cfg.loss_form == "printed":
        # (1 + c) D + (1 - c) max(0, M) - D  ==  c D + (1 - c) M for M > 0
        shift = tape.const((1.0 - c) * max(0.0, cfg.margin))
        return tape.mean(tape.add(tape.cmul(d, c), shift))
    hinge = tape.relu(tape.add(tape.scale(d, -1.0), tape.const(np.full((k, 1), cfg.margin))))
    pull = tape.cmul(d, 0.5 * (1.0 + c))
    push = tape.cmul(hinge, 0.5 * (1.0 - c))
    return tape.mean(tape.add(pull, push))


def _require_finite(loss: float, epoch: int, kind: str) -> None:
    if not np.isfinite(loss):
        raise RuntimeError(f"{kind} training diverged: non-finite loss {loss} at epoch {epoch}")


DatasetProvider = Callable[[int], Sequence[DatasetEntry]]


def _size_groups(entries: Sequence[DatasetEntry]) -> list[tuple[int, list[int]]]:
    """Entry indices grouped by subgraph vertex count, for batched encoding."""
    groups: dict[int, list[int]] = {}
    for i, entry in enumerate(entries):
        groups.setdefault(entry.subgraph.size, []).append(i)
    return sorted(groups.items())


def encode_centers_on_tape(
    tape: Tape, encoder: GatStack, entries: Sequence[DatasetEntry]
) -> Node:
    """Center embeddings of every entry, in entry order, shape (len, d)."""
    blocks: list[Node] = []
    order: list[int] = []
    for n, idxs in _size_groups(entries):
        out = encode_group_on_tape(tape, encoder, [entries[i].subgraph for i in idxs])
        blocks.append(tape.take_rows(out, np.arange(len(idxs)) * n))
        order.extend(idxs)
    grouped = blocks[0] if len(blocks) == 1 else tape.concat(blocks, axis=0)
    if order == list(range(len(entries))):
        return grouped
    inverse = np.empty(len(entries), dtype=np.intp)
    inverse[np.asarray(order)] = np.arange(len(order))
    return tape.take_rows(grouped, inverse)


def encode_centers(encoder: GatStack, entries: Sequence[DatasetEntry]) -> np.ndarray:
    """Eager center embeddings for a dataset, one row per entry."""
    return encode_centers_on_tape(Tape(), encoder, entries).value


def train_sgnn(
    dataset: Sequence[DatasetEntry],
    arch: ArchConfig,
    cfg: TrainingConfig,
    dataset_provider: DatasetProvider | None = None,
) -> tuple[GatStack, TrainReport]:
    """Fit the twin encoder with mined contrastive pairs.

    Each epoch re-encodes every subgraph, mines pairs against the fresh
    embeddings, and takes one Adam step on the mean pair loss. A
    ``dataset_provider`` may substitute re-sampled subgraphs per epoch.
    """
    entries = list(dataset)
    if len(entries) < 2:
        raise ValueError("training needs at least 2 dataset entries")
    started = time.perf_counter()
    encoder = init_encoder(arch, cfg.seed)
    adam = Adam(encoder.parameters(), cfg.learning_rate)
    losses: list[float] = []
    for epoch in range(cfg.epochs):
        if dataset_provider is not None and epoch > 0:
            entries = list(dataset_provider(epoch))
        tape = Tape()
        z_all = encode_centers_on_tape(tape, encoder, entries)
        targets = np.stack([e.target for e in entries])
        pairs = mine_informative_pairs(
            z_all.value, targets, cfg, substream(cfg.seed, "pairs", epoch)
        )
        loss_node = pair_loss_on_tape(tape, z_all, pairs, cfg)
        loss = float(loss_node.value[0, 0])
        _require_finite(loss, epoch, "contrastive")
        tape.backward(loss_node)
        adam.step()
        losses.append(loss)
        if epoch % 25 == 0:
            logger.debug("contrastive epoch %d loss %.6f", epoch, loss)
    report = TrainReport(epoch_losses=losses, wall_time_s=time.perf_counter() - started)
    return encoder, report


def train_gae(
    dataset: Sequence[DatasetEntry],
    arch: ArchConfig,
    cfg: TrainingConfig,
    dataset_provider: DatasetProvider | None = None,
) -> tuple[GatStack, GatStack, TrainReport]:
    """Fit encoder and decoder on feature reconstruction.

    Only the returned encoder takes part in inference; the decoder exists to
    train it and is flagged non-inferential when checkpointed.
    """
    entries = list(dataset)
    if len(entries) < 2:
        raise ValueError("training needs at least 2 dataset entries")
    started = time.perf_counter()
    encoder = init_encoder(arch, cfg.seed)
    decoder = init_decoder(arch, cfg.seed)
    adam = Adam(encoder.parameters() + decoder.parameters(), cfg.learning_rate)
    losses: list[float] = []
    for epoch in range(cfg.epochs):
        if dataset_provider is not None and epoch > 0:
            entries = list(dataset_provider(epoch))
        tape = Tape()
        per_entry = []
        for n, idxs in _size_groups(entries):
            subgraphs = [entries[i].subgraph for i in idxs]
            z = encode_group_on_tape(tape, encoder, subgraphs)
            x_hat = decode_group_on_tape(tape, decoder, subgraphs, z)
            features = np.concatenate([s.features for s in subgraphs])
            row_errors = tape.rownorm(tape.sub(tape.const(features), x_hat))
            per_entry.append(tape.scale(tape.sum_blocks(row_errors, n), 1.0 / n))
        loss_node = tape.mean(per_entry[0] if len(per_entry) == 1 else tape.concat(per_entry, axis=0))
        loss = float(loss_node.value[0, 0])
        _require_finite(loss, epoch, "reconstruction")
        tape.backward(loss_node)
        adam.step()
        losses.append(loss)
        if epoch % 25 == 0:
            logger.debug("reconstruction epoch %d loss %.6f", epoch, loss)
    report = TrainReport(epoch_losses=losses, wall_time_s=time.perf_counter() - started)
    return encoder, decoder, report
