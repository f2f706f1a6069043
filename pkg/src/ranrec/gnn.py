"""Multi-head graph attention stacks over sampled subgraphs.

Each layer runs H attention heads. A head scores a vertex pair by applying
the nonlinearity before the attention projection,
``e_ij = a . leaky_relu(h_j W_src + h_i W_dst)``, normalizes scores over the
vertex's subgraph neighbors plus itself, and averages source projections
with those weights. Head outputs are concatenated and aggregated by a
two-layer feed-forward network. Stacks compose layers into an encoder
(features -> latent embeddings) or a decoder (embeddings -> reconstructed
features) over the same subgraph topology.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Node, Parameter, Tape, leaky_relu_values
from .graph import AttributeSchema, NormalizationStats
from .rng import substream
from .sampler import Subgraph


@dataclass(frozen=True)
class ArchConfig:
    """Stack dimensions. Hidden layers share ``hidden_dim`` outputs."""

    in_dim: int
    embedding_dim: int = 14
    layers: int = 2
    heads: int = 4
    head_dim: int = 16
    ffn_hidden: int = 64
    hidden_dim: int = 64
    slope: float = 0.2

    def __post_init__(self) -> None:
        for field_name in ("in_dim", "embedding_dim", "layers", "heads", "head_dim", "ffn_hidden", "hidden_dim"):
            if getattr(self, field_name) < 1:
                raise ValueError(f"{field_name} must be positive")
        if not 0.0 < self.slope < 1.0:
            raise ValueError(f"slope must be in (0, 1), got {self.slope}")

    def to_json(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "embedding_dim": self.embedding_dim,
            "layers": self.layers,
            "heads": self.heads,
            "head_dim": self.head_dim,
            "ffn_hidden": self.ffn_hidden,
            "hidden_dim": self.hidden_dim,
            "slope": self.slope,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ArchConfig":
        return cls(**{k: (float(v) if k == "slope" else int(v)) for k, v in data.items()})


@dataclass
class HeadParams:
    W_src: Parameter
    W_dst: Parameter
    a: Parameter


@dataclass
class LayerParams:
    heads: tuple[HeadParams, ...]
    W1: Parameter
    b1: Parameter
    W2: Parameter
    b2: Parameter

    @property
    def in_dim(self) -> int:
        return self.heads[0].W_src.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W2.shape[1]


@dataclass
class GatStack:
    """An ordered chain of attention layers with a shared score slope."""

    layers: tuple[LayerParams, ...]
    slope: float

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for layer in self.layers:
            for head in layer.heads:
                out.extend([head.W_src, head.W_dst, head.a])
            out.extend([layer.W1, layer.b1, layer.W2, layer.b2])
        return out


def _glorot(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


def _init_layer(rng: np.random.Generator, prefix: str, in_dim: int, arch: ArchConfig, out_dim: int) -> LayerParams:
    heads = []
    for h in range(arch.heads):
        heads.append(
            HeadParams(
                W_src=Parameter(f"{prefix}.head{h}.W_src", _glorot(rng, in_dim, arch.head_dim)),
                W_dst=Parameter(f"{prefix}.head{h}.W_dst", _glorot(rng, in_dim, arch.head_dim)),
                a=Parameter(f"{prefix}.head{h}.a", _glorot(rng, arch.head_dim, 1)),
            )
        )
    concat_dim = arch.heads * arch.head_dim
    return LayerParams(
        heads=tuple(heads),
        W1=Parameter(f"{prefix}.ffn.W1", _glorot(rng, concat_dim, arch.ffn_hidden)),
        b1=Parameter(f"{prefix}.ffn.b1", np.zeros((1, arch.ffn_hidden))),
        W2=Parameter(f"{prefix}.ffn.W2", _glorot(rng, arch.ffn_hidden, out_dim)),
        b2=Parameter(f"{prefix}.ffn.b2", np.zeros((1, out_dim))),
    )


def _init_stack(arch: ArchConfig, seed: int, kind: str, in_dim: int, out_dim: int) -> GatStack:
    rng = substream(seed, kind)
    dims_in = [in_dim] + [arch.hidden_dim] * (arch.layers - 1)
    dims_out = [arch.hidden_dim] * (arch.layers - 1) + [out_dim]
    layers = tuple(
        _init_layer(rng, f"{kind}.layer{i}", dims_in[i], arch, dims_out[i])
        for i in range(arch.layers)
    )
    return GatStack(layers=layers, slope=arch.slope)


def init_encoder(arch: ArchConfig, seed: int) -> GatStack:
    """Glorot-uniform weights and zero biases, deterministic per seed."""
    return _init_stack(arch, seed, "encoder", arch.in_dim, arch.embedding_dim)


def init_decoder(arch: ArchConfig, seed: int) -> GatStack:
    return _init_stack(arch, seed, "decoder", arch.embedding_dim, arch.in_dim)


# ---------------------------------------------------------------------------
# Forward passes
#
# Subgraphs of a common vertex count n batch into one computation: feature
# rows stack into (B*n, in_dim) and every op below works per block, so one
# tape node covers the whole batch.


def attention_mask(subgraph: Subgraph) -> np.ndarray:
    """Self-inclusive adjacency mask: every vertex attends to itself."""
    n = subgraph.size
    mask = np.eye(n, dtype=bool)
    for i, j in subgraph.edges:
        mask[i, j] = True
        mask[j, i] = True
    return mask


def attention_scores(head: HeadParams, h_i: np.ndarray, h_j: np.ndarray, slope: float) -> float:
    """Raw attention score of vertex i attending to vertex j."""
    pre = np.asarray(h_j) @ head.W_src.value + np.asarray(h_i) @ head.W_dst.value
    return float(leaky_relu_values(pre, slope) @ head.a.value.ravel())


def _head_forward(
    tape: Tape, head: HeadParams, h: Node, n: int, masks: np.ndarray, slope: float
) -> tuple[Node, Node]:
    """Returns (attention-weighted source projections, attention weights).

    ``h`` is (B*n, in); ``masks`` the B stacked (n, n) self-inclusive masks.
    """
    rows = h.shape[0]
    s = tape.matmul(h, tape.param(head.W_src))
    t = tape.matmul(h, tape.param(head.W_dst))
    src = tape.pair_source(s, n)  # row (b, i, j) carries s[b, j]
    pairs = tape.add(src, tape.pair_target(t, n))
    scores = tape.matmul(tape.leaky_relu(pairs, slope), tape.param(head.a))
    alpha = tape.masked_softmax(tape.reshape(scores, rows, n), masks)
    weighted = tape.mul_col(src, tape.reshape(alpha, rows * n, 1))
    return tape.sum_blocks(weighted, n), alpha


def layer_forward(
    tape: Tape, layer: LayerParams, h: Node, n: int, masks: np.ndarray, slope: float
) -> Node:
    """One multi-head attention layer followed by the FFN aggregation."""
    head_outs = [_head_forward(tape, head, h, n, masks, slope)[0] for head in layer.heads]
    concat = tape.concat(head_outs, axis=1)
    hidden = tape.leaky_relu(
        tape.add(tape.matmul(concat, tape.param(layer.W1)), tape.param(layer.b1)), slope
    )
    return tape.add(tape.matmul(hidden, tape.param(layer.W2)), tape.param(layer.b2))


def stack_forward(tape: Tape, stack: GatStack, h0: Node, n: int, masks: np.ndarray) -> Node:
    h = h0
    for layer in stack.layers:
        h = layer_forward(tape, layer, h, n, masks, stack.slope)
    return h


def _stacked_masks(subgraphs: Sequence[Subgraph]) -> np.ndarray:
    return np.concatenate([attention_mask(s) for s in subgraphs])


def encode_group_on_tape(tape: Tape, stack: GatStack, subgraphs: Sequence[Subgraph]) -> Node:
    """Per-vertex embeddings of equally-sized subgraphs, stacked block-wise."""
    n = subgraphs[0].size
    if any(s.size != n for s in subgraphs):
        raise ValueError("grouped subgraphs must share one vertex count")
    features = np.concatenate([s.features for s in subgraphs])
    if features.shape[1] != stack.in_dim:
        raise ValueError(
            f"subgraph features have {features.shape[1]} columns, "
            f"encoder expects {stack.in_dim}"
        )
    return stack_forward(tape, stack, tape.const(features), n, _stacked_masks(subgraphs))


def decode_group_on_tape(
    tape: Tape, stack: GatStack, subgraphs: Sequence[Subgraph], z: Node
) -> Node:
    n = subgraphs[0].size
    if z.shape != (n * len(subgraphs), stack.in_dim):
        raise ValueError(f"embedding matrix shape {z.shape} does not match decoder input")
    return stack_forward(tape, stack, z, n, _stacked_masks(subgraphs))


def encode_on_tape(tape: Tape, stack: GatStack, subgraph: Subgraph) -> Node:
    return encode_group_on_tape(tape, stack, [subgraph])


def encode(stack: GatStack, subgraph: Subgraph) -> np.ndarray:
    """Per-vertex embeddings; row 0 belongs to the center cell."""
    return encode_on_tape(Tape(), stack, subgraph).value


def decode_on_tape(tape: Tape, stack: GatStack, subgraph: Subgraph, z: Node) -> Node:
    return decode_group_on_tape(tape, stack, [subgraph], z)


def decode(stack: GatStack, subgraph: Subgraph, z: np.ndarray) -> np.ndarray:
    """Reconstructed per-vertex features from embeddings."""
    tape = Tape()
    return decode_on_tape(tape, stack, subgraph, tape.const(z)).value


def attention_matrices(stack: GatStack, subgraph: Subgraph) -> list[list[np.ndarray]]:
    """Per-layer, per-head attention weight matrices (rows sum to 1)."""
    tape = Tape()
    n = subgraph.size
    masks = attention_mask(subgraph)
    h: Node = tape.const(subgraph.features)
    out: list[list[np.ndarray]] = []
    for layer in stack.layers:
        weights = []
        head_outs = []
        for head in layer.heads:
            head_out, alpha = _head_forward(tape, head, h, n, masks, stack.slope)
            head_outs.append(head_out)
            weights.append(alpha.value)
        out.append(weights)
        concat = tape.concat(head_outs, axis=1)
        hidden = tape.leaky_relu(
            tape.add(tape.matmul(concat, tape.param(layer.W1)), tape.param(layer.b1)),
            stack.slope,
        )
        h = tape.add(tape.matmul(hidden, tape.param(layer.W2)), tape.param(layer.b2))
    return out


# ---------------------------------------------------------------------------
# Checkpoints


def schema_hash(schema: AttributeSchema) -> str:
    payload = json.dumps(schema.to_json(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _dump_params(stack: GatStack) -> list[dict]:
    return [
        {"name": p.name, "shape": list(p.shape), "data": p.value.ravel().tolist()}
        for p in stack.parameters()
    ]


def _load_params(stack: GatStack, items: list[dict]) -> None:
    params = stack.parameters()
    if len(items) != len(params):
        raise ValueError(f"checkpoint has {len(items)} tensors, expected {len(params)}")
    for p, item in zip(params, items):
        if item["name"] != p.name or tuple(item["shape"]) != p.shape:
            raise ValueError(f"checkpoint tensor mismatch at {item['name']!r}")
        p.value = np.array(item["data"], dtype=np.float64).reshape(p.shape)
        p.grad = np.zeros_like(p.value)


@dataclass
class Checkpoint:
    """Serializable trained model: encoder, optional decoder, preprocessing."""

    model: str  # "sgnn" | "gae" | "untrained"
    arch: ArchConfig
    seed: int
    schema_digest: str
    stats: NormalizationStats
    encoder: GatStack
    decoder: GatStack | None = None
    fanout: int = 8  # neighbor-sampling width used at training time

    def to_json(self) -> dict:
        payload = {
            "model": self.model,
            "arch": self.arch.to_json(),
            "seed": self.seed,
            "schema_hash": self.schema_digest,
            "stats": self.stats.to_json(),
            "sampler_fanout": self.fanout,
            "params": _dump_params(self.encoder),
        }
        if self.decoder is not None:
            # The decoder never takes part in inference; kept for audit only.
            payload["decoder"] = {"non_inferential": True, "params": _dump_params(self.decoder)}
        return payload

    @classmethod
    def from_json(cls, data: dict, schema: AttributeSchema | None = None) -> "Checkpoint":
        digest = str(data["schema_hash"])
        if schema is not None and schema_hash(schema) != digest:
            raise ValueError("checkpoint schema hash does not match the network schema")
        arch = ArchConfig.from_json(data["arch"])
        seed = int(data["seed"])
        encoder = init_encoder(arch, seed)
        _load_params(encoder, data["params"])
        decoder = None
        if "decoder" in data:
            decoder = init_decoder(arch, seed)
            _load_params(decoder, data["decoder"]["params"])
        return cls(
            model=str(data["model"]),
            arch=arch,
            seed=seed,
            schema_digest=digest,
            stats=NormalizationStats.from_json(data["stats"]),
            encoder=encoder,
            decoder=decoder,
            fanout=int(data.get("sampler_fanout", 8)),
        )
