"""Attention layers and encoder stacks over sampled subgraphs."""

from __future__ import annotations

import numpy as np
import pytest

from ranrec.autodiff import Tape, grad_check, leaky_relu_values
from ranrec.gnn import (
    ArchConfig,
    Checkpoint,
    attention_matrices,
    attention_scores,
    decode,
    decode_on_tape,
    encode,
    encode_on_tape,
    init_decoder,
    init_encoder,
    schema_hash,
)
from ranrec.graph import NormalizationStats, SlotStats
from ranrec.sampler import Subgraph

from conftest import small_schema


def make_subgraph(n_neighbors: int, in_dim: int = 5, seed: int = 0, edges=None) -> Subgraph:
    rng = np.random.default_rng(seed)
    features = rng.random(size=(1 + n_neighbors, in_dim))
    if edges is None:
        edges = tuple((0, j) for j in range(1, 1 + n_neighbors))
    return Subgraph(
        center="center",
        neighbors=tuple(f"nb{j}" for j in range(n_neighbors)),
        edges=tuple(edges),
        features=features,
    )


def tiny_arch(in_dim: int = 5) -> ArchConfig:
    return ArchConfig(
        in_dim=in_dim, embedding_dim=3, layers=2, heads=2, head_dim=4, ffn_hidden=6, hidden_dim=5
    )


class TestAttentionScores:
    def test_zero_attention_vector(self):
        stack = init_encoder(tiny_arch(), seed=0)
        head = stack.layers[0].heads[0]
        head.a.value[:] = 0.0
        h = np.ones(5)
        assert attention_scores(head, h, h, slope=0.2) == 0.0

    def test_zero_projections(self):
        stack = init_encoder(tiny_arch(), seed=0)
        head = stack.layers[0].heads[0]
        head.W_src.value[:] = 0.0
        head.W_dst.value[:] = 0.0
        assert attention_scores(head, np.ones(5), np.full(5, 2.0), slope=0.2) == 0.0

    def test_matches_hand_evaluation(self):
        rng = np.random.default_rng(5)
        stack = init_encoder(tiny_arch(in_dim=3), seed=1)
        head = stack.layers[0].heads[0]
        h_i = rng.normal(size=3)
        h_j = rng.normal(size=3)
        pre = h_j @ head.W_src.value + h_i @ head.W_dst.value
        expected = float(leaky_relu_values(pre, 0.2) @ head.a.value.ravel())
        assert attention_scores(head, h_i, h_j, slope=0.2) == pytest.approx(expected, rel=1e-12)


class TestLayerForward:
    def test_single_vertex_attends_to_itself(self):
        stack = init_encoder(tiny_arch(), seed=2)
        sub = make_subgraph(0)
        alphas = attention_matrices(stack, sub)
        for layer_weights in alphas:
            for alpha in layer_weights:
                assert alpha.shape == (1, 1)
                assert alpha[0, 0] == pytest.approx(1.0)
        assert np.isfinite(encode(stack, sub)).all()

    def test_zero_attention_vector_gives_uniform_weights(self):
        stack = init_encoder(tiny_arch(), seed=3)
        for layer in stack.layers:
            for head in layer.heads:
                head.a.value[:] = 0.0
        sub = make_subgraph(3)  # center + 3 neighbors, star edges
        alphas = attention_matrices(stack, sub)
        center_row = alphas[0][0][0]
        assert np.allclose(center_row, 0.25)

    def test_attention_rows_are_probability_vectors(self):
        stack = init_encoder(tiny_arch(), seed=4)
        sub = make_subgraph(4, edges=[(0, 1), (0, 2), (0, 3), (0, 4), (1, 2)])
        for layer_weights in attention_matrices(stack, sub):
            for alpha in layer_weights:
                assert np.all(alpha >= 0.0)
                assert np.allclose(alpha.sum(axis=1), 1.0, atol=1e-12)

    def test_masked_pairs_get_zero_weight(self):
        stack = init_encoder(tiny_arch(), seed=5)
        sub = make_subgraph(3)  # star: neighbors are not adjacent to each other
        alpha = attention_matrices(stack, sub)[0][0]
        assert alpha[1, 2] == 0.0
        assert alpha[2, 3] == 0.0


class TestEncodeDecode:
    def test_deterministic(self):
        stack = init_encoder(tiny_arch(), seed=6)
        sub = make_subgraph(3)
        assert np.array_equal(encode(stack, sub), encode(stack, sub))

    def test_identical_subgraphs_identical_centers(self):
        stack = init_encoder(tiny_arch(), seed=7)
        a = make_subgraph(3, seed=11)
        b = Subgraph(
            center="other",
            neighbors=("x", "y", "z"),
            edges=a.edges,
            features=a.features.copy(),
        )
        assert np.allclose(encode(stack, a)[0], encode(stack, b)[0])

    def test_neighbor_permutation_invariance(self):
        stack = init_encoder(tiny_arch(), seed=8)
        rng = np.random.default_rng(9)
        features = rng.random(size=(5, 5))
        edges = [(0, 1), (0, 2), (0, 3), (0, 4), (2, 3)]
        sub = Subgraph(center="c", neighbors=("a", "b", "d", "e"), edges=tuple(edges), features=features)
        # permute neighbor order (vertex 0 stays center)
        perm = [0, 3, 1, 4, 2]
        inv = {old: new for new, old in enumerate(perm)}
        permuted_edges = tuple(tuple(sorted((inv[i], inv[j]))) for i, j in edges)
        permuted = Subgraph(
            center="c",
            neighbors=tuple(np.array(["a", "b", "d", "e"])[np.array(perm[1:]) - 1]),
            edges=permuted_edges,
            features=features[perm],
        )
        out = encode(stack, sub)
        out_permuted = encode(stack, permuted)
        assert np.abs(out_permuted[0] - out[0]).max() <= 1e-12
        for old, new in inv.items():
            assert np.abs(out_permuted[new] - out[old]).max() <= 1e-12

    def test_default_embedding_dimension(self):
        assert ArchConfig(in_dim=6).embedding_dim == 14

    def test_decode_shape_matches_features(self):
        arch = tiny_arch()
        enc = init_encoder(arch, seed=10)
        dec = init_decoder(arch, seed=10)
        sub = make_subgraph(2)
        z = encode(enc, sub)
        x_hat = decode(dec, sub, z)
        assert x_hat.shape == sub.features.shape

    def test_decode_deterministic(self):
        arch = tiny_arch()
        dec = init_decoder(arch, seed=11)
        sub = make_subgraph(2)
        z = np.random.default_rng(1).normal(size=(3, arch.embedding_dim))
        assert np.array_equal(decode(dec, sub, z), decode(dec, sub, z))

    def test_reconstruction_gradient(self):
        arch = tiny_arch(in_dim=3)
        enc = init_encoder(arch, seed=12)
        dec = init_decoder(arch, seed=12)
        sub = make_subgraph(2, in_dim=3)

        def f(tape: Tape):
            z = encode_on_tape(tape, enc, sub)
            x_hat = decode_on_tape(tape, dec, sub, z)
            diff = tape.sub(tape.const(sub.features), x_hat)
            return tape.mean(tape.rownorm(diff))

        assert grad_check(f, enc.parameters() + dec.parameters()) < 1e-4

    def test_wrong_feature_width_rejected(self):
        stack = init_encoder(tiny_arch(in_dim=4), seed=13)
        with pytest.raises(ValueError, match="columns"):
            encode(stack, make_subgraph(2, in_dim=7))


class TestInit:
    def test_same_seed_bitwise_identical(self):
        a = init_encoder(tiny_arch(), seed=21)
        b = init_encoder(tiny_arch(), seed=21)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa.value, pb.value)

    def test_different_seeds_differ(self):
        a = init_encoder(tiny_arch(), seed=21)
        b = init_encoder(tiny_arch(), seed=22)
        assert any(
            not np.array_equal(pa.value, pb.value)
            for pa, pb in zip(a.parameters(), b.parameters())
        )

    def test_glorot_bound(self):
        arch = ArchConfig(
            in_dim=4, embedding_dim=4, layers=1, heads=1, head_dim=4, ffn_hidden=4, hidden_dim=4
        )
        stack = init_encoder(arch, seed=23)
        w = stack.layers[0].heads[0].W_src.value
        bound = np.sqrt(6.0 / 8.0)
        assert np.all(np.abs(w) <= bound)

    def test_biases_zero(self):
        stack = init_encoder(tiny_arch(), seed=24)
        for layer in stack.layers:
            assert not layer.b1.value.any()
            assert not layer.b2.value.any()

    def test_dims_chain(self):
        arch = tiny_arch()
        enc = init_encoder(arch, seed=25)
        assert enc.in_dim == arch.in_dim
        assert enc.out_dim == arch.embedding_dim
        dec = init_decoder(arch, seed=25)
        assert dec.in_dim == arch.embedding_dim
        assert dec.out_dim == arch.in_dim


class TestCheckpoint:
    def _stats(self):
        return NormalizationStats(
            predictor=(SlotStats(0.0, 1.0),) * 4,
            config=(SlotStats(0.0, 1.0),) * 4,
        )

    def test_roundtrip(self):
        schema = small_schema()
        arch = tiny_arch(in_dim=schema.predictor_dim)
        enc = init_encoder(arch, seed=31)
        dec = init_decoder(arch, seed=31)
        ckpt = Checkpoint(
            model="gae",
            arch=arch,
            seed=31,
            schema_digest=schema_hash(schema),
            stats=self._stats(),
            encoder=enc,
            decoder=dec,
            fanout=5,
        )
        payload = ckpt.to_json()
        assert payload["decoder"]["non_inferential"] is True
        loaded = Checkpoint.from_json(payload, schema=schema)
        for pa, pb in zip(enc.parameters(), loaded.encoder.parameters()):
            assert np.array_equal(pa.value, pb.value)
        for pa, pb in zip(dec.parameters(), loaded.decoder.parameters()):
            assert np.array_equal(pa.value, pb.value)
        assert loaded.fanout == 5

    def test_schema_hash_verified(self):
        schema = small_schema()
        arch = tiny_arch(in_dim=schema.predictor_dim)
        ckpt = Checkpoint(
            model="sgnn",
            arch=arch,
            seed=1,
            schema_digest="deadbeef",
            stats=self._stats(),
            encoder=init_encoder(arch, seed=1),
        )
        with pytest.raises(ValueError, match="schema hash"):
            Checkpoint.from_json(ckpt.to_json(), schema=schema)
