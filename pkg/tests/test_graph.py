"""Network graph model: parsing, invariants, normalization, vectors."""

from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ranrec.graph import (
    NetworkFormatError,
    RanGraph,
    denormalize,
    fit_normalization,
    load_network,
    vectorize,
)

from conftest import lte_cell, nr_cell, small_schema


def _network_payload() -> dict:
    return {
        "schema": small_schema().to_json(),
        "cells": [
            {
                "cell_id": "a",
                "node_id": "n1",
                "technology": "LTE",
                "predictors": {"bw": 10, "chan": 100},
                "configs": {"power": -100, "preamble": -120},
            },
            {
                "cell_id": "b",
                "node_id": "n2",
                "technology": "NR",
                "predictors": {"bw": 50, "chan": 5000},
                "configs": {"power": -90, "preamble": -110},
            },
        ],
        "edges": [["a", "b", "inter_node"]],
    }


class TestLoadNetwork:
    def test_two_cell_file(self, tmp_path):
        path = tmp_path / "net.json"
        path.write_text(json.dumps(_network_payload()))
        graph = load_network(path)
        assert graph.lte_count + graph.nr_count == 2
        assert len(graph.edges) == 1

    def test_self_loop_rejected(self, tmp_path):
        payload = _network_payload()
        payload["edges"] = [["a", "a", "inter_node"]]
        path = tmp_path / "net.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(NetworkFormatError, match="self-loop"):
            load_network(path)

    def test_intra_node_edges_materialize(self):
        cells = [lte_cell(f"c{i}", node_id="shared") for i in range(3)]
        graph = RanGraph(schema=small_schema(), cells=cells, edges=[])
        assert len(graph.edges) == 3
        for a, b, kind in graph.edges:
            assert kind == "intra_node"
        # enumeration: every pair among the three cells is connected
        ids = [c.cell_id for c in cells]
        expected = {(min(a, b), max(a, b)) for i, a in enumerate(ids) for b in ids[i + 1 :]}
        assert {(a, b) for a, b, _ in graph.edges} == expected

    def test_duplicate_cell_id(self):
        with pytest.raises(NetworkFormatError, match="duplicate cell_id"):
            RanGraph(schema=small_schema(), cells=[lte_cell("x"), lte_cell("x")])

    def test_edge_to_unknown_cell(self):
        with pytest.raises(NetworkFormatError, match="unknown cell"):
            RanGraph(
                schema=small_schema(),
                cells=[lte_cell("a")],
                edges=[("a", "ghost", "inter_node")],
            )

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"schema": [,]}')
        with pytest.raises(NetworkFormatError, match=r":1:"):
            load_network(path)

    def test_missing_own_technology_attribute(self):
        bad = lte_cell("a")
        bad = type(bad)(
            cell_id="a",
            node_id="n1",
            technology="LTE",
            raw_predictors={"bw": 10},  # chan missing
            raw_configs={"power": -100, "preamble": -120},
        )
        with pytest.raises(NetworkFormatError, match="missing predictor"):
            RanGraph(schema=small_schema(), cells=[bad])

    def test_wrong_technology_attribute_rejected(self):
        bad = type(lte_cell("a"))(
            cell_id="a",
            node_id="n1",
            technology="NR",
            raw_predictors={"bw": 10, "chan": 100},
            raw_configs={"power": -100, "preamble": -120, "extra": 1.0},
        )
        with pytest.raises(NetworkFormatError, match="unknown or wrong-technology"):
            RanGraph(schema=small_schema(), cells=[bad])


class TestNormalization:
    def _graph(self, values):
        cells = [
            lte_cell(f"c{i}", node_id=f"n{i}", chan=v, power=-100.0 - i) for i, v in enumerate(values)
        ]
        cells.append(nr_cell("nrpad", node_id="npad"))
        return RanGraph(schema=small_schema(), cells=cells)

    def test_extrema(self):
        graph = self._graph([2.0, 4.0, 6.0])
        stats = fit_normalization(graph, graph.cell_ids)
        by_key = {
            (s.technology, s.name): slot
            for s, slot in zip(graph.schema.predictor_layout, stats.predictor)
        }
        slot = by_key[("LTE", "chan")]
        assert (slot.minimum, slot.maximum) == (2.0, 6.0)

    def test_single_cell_degenerate(self):
        graph = self._graph([3.0])
        stats = fit_normalization(graph, graph.cell_ids)
        slot = stats.predictor[1]  # LTE chan slot
        assert slot.minimum == slot.maximum == 3.0

    def test_negative_extrema(self):
        graph = self._graph([-5.0, 5.0])
        stats = fit_normalization(graph, graph.cell_ids)
        slot = stats.predictor[1]
        assert (slot.minimum, slot.maximum) == (-5.0, 5.0)

    def test_unobserved_attribute_named(self):
        graph = RanGraph(schema=small_schema(), cells=[lte_cell("a"), nr_cell("b")])
        with pytest.raises(ValueError, match="'bw'.*NR"):
            fit_normalization(graph, ["a"])  # no NR cell in training set

    def test_empty_train_set(self):
        graph = self._graph([1.0])
        with pytest.raises(ValueError, match="non-empty"):
            fit_normalization(graph, [])


class TestVectorize:
    def _fitted(self):
        cells = [
            lte_cell("a", chan=2.0),
            lte_cell("b", node_id="n2", chan=6.0),
            nr_cell("c", node_id="n3"),
        ]
        graph = RanGraph(schema=small_schema(), cells=cells)
        return graph, fit_normalization(graph, graph.cell_ids)

    def test_midpoint(self):
        graph, stats = self._fitted()
        cell = lte_cell("q", node_id="nq", chan=4.0)
        vec = vectorize(cell, stats, graph.schema)
        assert vec.x[1] == pytest.approx(0.5)

    def test_other_technology_slots_zero(self):
        graph, stats = self._fitted()
        vec = vectorize(graph.cell("a"), stats, graph.schema)
        nr_slots = [i for i, s in enumerate(graph.schema.predictor_layout) if s.technology == "NR"]
        assert all(vec.x[i] == 0.0 for i in nr_slots)
        nr_cfg = [i for i, s in enumerate(graph.schema.config_layout) if s.technology == "NR"]
        assert all(vec.y[i] == 0.0 for i in nr_cfg)

    def test_degenerate_range_is_zero(self):
        graph, stats = self._fitted()
        # NR chan was observed on one cell only: min == max
        vec = vectorize(graph.cell("c"), stats, graph.schema)
        nr_chan = [
            i
            for i, s in enumerate(graph.schema.predictor_layout)
            if s.technology == "NR" and s.name == "chan"
        ][0]
        assert vec.x[nr_chan] == 0.0

    def test_out_of_range_clamps(self):
        graph, stats = self._fitted()
        high = lte_cell("q", node_id="nq", chan=1e9, power=-50.0)
        vec = vectorize(high, stats, graph.schema)
        assert vec.x.max() <= 1.0 and vec.x.min() >= 0.0
        assert vec.y.max() <= 1.0 and vec.y.min() >= 0.0


class TestDenormalize:
    def _stats(self, values=(2.0, 4.0, 6.0)):
        cells = [
            lte_cell(f"c{i}", node_id=f"n{i}", power=v, preamble=v) for i, v in enumerate(values)
        ]
        cells.append(nr_cell("nrpad", node_id="npad"))
        graph = RanGraph(schema=small_schema(), cells=cells)
        return graph, fit_normalization(graph, graph.cell_ids)

    def test_inverse_midpoint(self):
        graph, stats = self._stats()
        out = denormalize(np.array([0.5, 0.0, 0.0, 0.0]), stats, graph.schema)
        assert out["LTE.power"] == pytest.approx(4.0)

    def test_zero_maps_to_minimum(self):
        graph, stats = self._stats()
        out = denormalize(np.zeros(4), stats, graph.schema)
        assert out["LTE.power"] == pytest.approx(2.0)

    def test_discrete_snaps_to_observed(self):
        graph, stats = self._stats()
        # 0.52 of the [2, 6] range is 4.08; nearest observed value is 4
        out = denormalize(np.array([0.0, 0.52, 0.0, 0.0]), stats, graph.schema)
        assert out["LTE.preamble"] == 4.0

    def test_wrong_length_rejected(self):
        graph, stats = self._stats()
        with pytest.raises(ValueError, match="length"):
            denormalize(np.zeros(3), stats, graph.schema)


class TestProperties:
    @given(
        values=st.lists(
            st.floats(min_value=-1e6, max_value=1e6, allow_nan=False), min_size=2, max_size=8
        ),
        pick=st.integers(min_value=0, max_value=7),
    )
    @settings(max_examples=60, deadline=None)
    def test_roundtrip_continuous(self, values, pick):
        cells = [lte_cell(f"c{i}", node_id=f"n{i}", power=v) for i, v in enumerate(values)]
        cells.append(nr_cell("nrpad", node_id="npad"))
        graph = RanGraph(schema=small_schema(), cells=cells)
        stats = fit_normalization(graph, graph.cell_ids)
        cell = cells[pick % len(values)]
        vec = vectorize(cell, stats, graph.schema)
        out = denormalize(vec.y, stats, graph.schema)
        span = max(values) - min(values)
        assert abs(out["LTE.power"] - cell.raw_configs["power"]) <= 1e-9 * max(1.0, span)

    @given(value=st.floats(allow_nan=False, allow_infinity=False))
    @settings(max_examples=60, deadline=None)
    def test_entries_stay_in_unit_interval(self, value):
        cells = [lte_cell("a", chan=0.0), lte_cell("b", node_id="n2", chan=10.0), nr_cell("c", node_id="n3")]
        graph = RanGraph(schema=small_schema(), cells=cells)
        stats = fit_normalization(graph, graph.cell_ids)
        probe = lte_cell("q", node_id="nq", chan=value)
        vec = vectorize(probe, stats, graph.schema)
        assert 0.0 <= vec.x.min() and vec.x.max() <= 1.0

    def test_edge_symmetry(self):
        graph = RanGraph(
            schema=small_schema(),
            cells=[lte_cell("a"), lte_cell("b", node_id="n2"), lte_cell("c", node_id="n3")],
            edges=[("a", "b", "inter_node"), ("b", "c", "inter_node")],
        )
        for a, b, _ in graph.edges:
            assert b in graph.neighbors(a)
            assert a in graph.neighbors(b)

    def test_technology_partition(self):
        graph = RanGraph(
            schema=small_schema(),
            cells=[lte_cell("a"), nr_cell("b"), nr_cell("c", node_id="n3")],
        )
        assert graph.lte_count == 1
        assert graph.nr_count == 2
        assert graph.lte_count + graph.nr_count == len(graph.cells)
