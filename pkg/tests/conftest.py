"""Shared builders: a small two-technology schema and graph helpers."""

from __future__ import annotations

import numpy as np
import pytest

from ranrec.graph import AttributeSchema, AttributeSpec, CellRecord, RanGraph


def small_schema() -> AttributeSchema:
    return AttributeSchema(
        entries=(
            AttributeSpec("bw", "LTE", "predictor", "discrete"),
            AttributeSpec("chan", "LTE", "predictor", "continuous"),
            AttributeSpec("power", "LTE", "config", "continuous", "median"),
            AttributeSpec("preamble", "LTE", "config", "discrete", "mode"),
            AttributeSpec("bw", "NR", "predictor", "discrete"),
            AttributeSpec("chan", "NR", "predictor", "continuous"),
            AttributeSpec("power", "NR", "config", "continuous", "median"),
            AttributeSpec("preamble", "NR", "config", "discrete", "mode"),
        )
    )


def lte_cell(
    cell_id: str,
    node_id: str = "n1",
    bw: float = 10.0,
    chan: float = 100.0,
    power: float = -100.0,
    preamble: float = -120.0,
) -> CellRecord:
    return CellRecord(
        cell_id=cell_id,
        node_id=node_id,
        technology="LTE",
        raw_predictors={"bw": bw, "chan": chan},
        raw_configs={"power": power, "preamble": preamble},
    )


def nr_cell(
    cell_id: str,
    node_id: str = "n2",
    bw: float = 50.0,
    chan: float = 5000.0,
    power: float = -90.0,
    preamble: float = -110.0,
) -> CellRecord:
    return CellRecord(
        cell_id=cell_id,
        node_id=node_id,
        technology="NR",
        raw_predictors={"bw": bw, "chan": chan},
        raw_configs={"power": power, "preamble": preamble},
    )


def star_graph(degree: int) -> RanGraph:
    """An LTE hub with ``degree`` spokes on distinct nodes, plus one isolated
    NR cell so every schema attribute is observed. Total degree + 2 cells."""
    rng = np.random.default_rng(7)
    cells = [lte_cell("hub", node_id="nh")]
    edges = []
    for i in range(degree):
        cid = f"spoke{i:02d}"
        cells.append(
            lte_cell(
                cid,
                node_id=f"ns{i}",
                bw=float(rng.choice([5, 10, 20])),
                chan=float(rng.uniform(0, 200)),
                power=float(rng.uniform(-110, -90)),
                preamble=float(rng.choice([-126, -120, -114])),
            )
        )
        edges.append(("hub", cid, "inter_node"))
    cells.append(nr_cell("nrpad", node_id="npad"))
    return RanGraph(schema=small_schema(), cells=cells, edges=edges)


@pytest.fixture
def schema() -> AttributeSchema:
    return small_schema()
