"""Command-line workflow: synth -> train -> embed -> recommend / detect
-> evaluate / project.

Every command validates its inputs (exit 1 with the offending path and
reason), writes outputs atomically (temp file + rename), and drops a run
manifest with input/output hashes beside each primary output. Unexpected
failures exit 2. Set RANREC_LOG to error/info/debug for logging.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

from .anomaly import (
    DegenerateEmbeddingsError,
    anomaly_score,
    fit_forest,
    score_network,
    store_matrix,
)
from .config import ConfigError, RunConfig, load_config
from .evaluation import compare_models, pca_project
from .gnn import Checkpoint, encode, schema_hash
from .graph import (
    NetworkFormatError,
    denormalize,
    extend_network,
    feature_map,
    fit_normalization,
    load_network,
    parse_cells_payload,
)
from .inference import (
    StoreBundle,
    embed_new_cell,
    load_store,
    recommend_closest,
    recommend_majority,
)
from .sampler import SamplerConfig, build_dataset, sample_subgraph
from .synth import SynthSpec, generate
from .training import train_gae, train_sgnn

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


# ---------------------------------------------------------------------------
# Output plumbing


def _canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=1)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(
    command: str,
    seed: int,
    inputs: list[Path],
    outputs: list[Path],
    resolved: dict,
    started: float,
    beside: Path,
) -> None:
    manifest = {
        "command": command,
        "seed": seed,
        "config": resolved,
        "inputs": {str(p): _sha256(p) for p in inputs if p.exists()},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "wall_time_s": time.perf_counter() - started,
    }
    _atomic_write(beside.with_name(beside.name + ".manifest.json"), _canonical_json(manifest))


def _require_file(path: str, label: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise NetworkFormatError(f"{p}: {label} file does not exist")
    return p


def _load_run_config(args) -> RunConfig:
    config = load_config(_require_file(args.config, "config")) if args.config else RunConfig()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _float_repr(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(args) -> int:
    started = time.perf_counter()
    inputs: list[Path] = []
    if args.spec:
        spec_path = _require_file(args.spec, "synth spec")
        inputs.append(spec_path)
        try:
            spec = SynthSpec.from_json(json.loads(spec_path.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, TypeError) as exc:
            raise NetworkFormatError(f"{spec_path}: invalid synth spec: {exc}") from exc
    else:
        spec = SynthSpec()
    if args.seed is not None:
        spec = SynthSpec.from_json({**spec.to_json(), "seed": args.seed})
    graph, truth = generate(spec)
    out_dir = Path(args.out)
    network_path = out_dir / "network.json"
    truth_path = out_dir / "ground_truth.json"
    _atomic_write(network_path, _canonical_json(graph.to_json()))
    _atomic_write(truth_path, _canonical_json(truth.to_json()))
    logger.info("generated %d cells over %d sites", len(graph.cells), spec.sites)
    _write_manifest(
        "synth", spec.seed, inputs, [network_path, truth_path], spec.to_json(), started, network_path
    )
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.perf_counter()
    network_path = _require_file(args.network, "network")
    graph = load_network(network_path)
    config = _load_run_config(args)
    stats = fit_normalization(graph, graph.cell_ids)
    sampler_cfg = config.sampler()
    dataset = build_dataset(graph, stats, sampler_cfg)
    provider = None
    if config.resample_per_epoch:
        provider = lambda epoch: build_dataset(graph, stats, sampler_cfg, epoch=epoch)  # noqa: E731
    arch = config.arch(graph.schema.predictor_dim)
    decoder = None
    if args.model == "gae":
        encoder, decoder, report = train_gae(dataset, arch, config.training, provider)
    else:
        encoder, report = train_sgnn(dataset, arch, config.training, provider)
    checkpoint = Checkpoint(
        model=args.model,
        arch=arch,
        seed=config.seed,
        schema_digest=schema_hash(graph.schema),
        stats=stats,
        encoder=encoder,
        decoder=decoder,
        fanout=sampler_cfg.fanout,
    )
    out = Path(args.out)
    _atomic_write(out, _canonical_json(checkpoint.to_json()))
    report.checkpoint_path = str(out)
    _atomic_write(out.with_name(out.name + ".report.json"), _canonical_json(report.to_json()))
    inputs = [network_path] + ([Path(args.config)] if args.config else [])
    _write_manifest("train", config.seed, inputs, [out], {"model": args.model}, started, out)
    logger.info("trained %s for %d epochs", args.model, config.training.epochs)
    return EXIT_OK


def _read_checkpoint(path: Path, schema) -> Checkpoint:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    try:
        return Checkpoint.from_json(data, schema=schema)
    except (KeyError, ValueError) as exc:
        raise NetworkFormatError(f"{path}: invalid checkpoint: {exc}") from exc


def cmd_embed(args) -> int:
    started = time.perf_counter()
    network_path = _require_file(args.network, "network")
    checkpoint_path = _require_file(args.checkpoint, "checkpoint")
    graph = load_network(network_path)
    checkpoint = _read_checkpoint(checkpoint_path, graph.schema)
    seed = args.seed if args.seed is not None else checkpoint.seed
    bundle = StoreBundle(graph=graph, checkpoint=checkpoint)
    dataset = build_dataset(
        graph, checkpoint.stats, SamplerConfig(fanout=checkpoint.fanout, seed=seed)
    )
    for entry in dataset:
        z = encode(checkpoint.encoder, entry.subgraph)[0, :]
        bundle.store.add(entry.subgraph.center, z, entry.target)
    out = Path(args.out)
    _atomic_write(out, _canonical_json(bundle.to_json()))
    _write_manifest(
        "embed",
        seed,
        [network_path, checkpoint_path],
        [out],
        {"fanout": checkpoint.fanout},
        started,
        out,
    )
    logger.info("embedded %d cells", len(bundle.store))
    return EXIT_OK


def cmd_recommend(args) -> int:
    started = time.perf_counter()
    store_path = _require_file(args.store, "store")
    cells_path = _require_file(args.new_cells, "new-cells")
    try:
        bundle = load_store(store_path)
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise NetworkFormatError(f"{store_path}: invalid store: {exc}") from exc
    try:
        payload = json.loads(cells_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{cells_path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    new_cells, new_edges = parse_cells_payload(payload, source=str(cells_path))
    if not new_cells:
        raise NetworkFormatError(f"{cells_path}: no cells to recommend for")
    store_size = len(bundle.store)
    if args.mode == "majority" and not 1 <= args.k <= store_size:
        raise NetworkFormatError(
            f"--k {args.k} is out of range for a store of {store_size} records"
        )
    seed = args.seed if args.seed is not None else bundle.checkpoint.seed
    augmented = extend_network(bundle.graph, new_cells, new_edges)
    features = feature_map(augmented, bundle.stats)
    try:
        forest = fit_forest(
            store_matrix(bundle.store), t=100, psi=min(256, store_size), seed=seed
        )
    except (DegenerateEmbeddingsError, ValueError):
        forest = None  # novelty scores unavailable, recommendations still valid
    sampler_cfg = SamplerConfig(fanout=bundle.checkpoint.fanout, seed=seed)
    results = []
    for cell in new_cells:
        sub = sample_subgraph(augmented, cell.cell_id, sampler_cfg, features)
        z = embed_new_cell(bundle.store, sub)
        if args.mode == "majority":
            rec = recommend_majority(bundle.store, z, args.k, bundle.schema)
        else:
            rec = recommend_closest(bundle.store, z)
        score = anomaly_score(forest, z) if forest is not None else None
        results.append(
            {
                "cell_id": cell.cell_id,
                "mode": rec.mode,
                "y_hat": denormalize(rec.y_hat, bundle.stats, bundle.schema),
                "sources": [{"cell_id": cid, "distance": d} for cid, d in rec.sources],
                "anomaly_score": score,
            }
        )
        bundle.store.add(cell.cell_id, z, rec.y_hat)
    out = Path(args.out)
    _atomic_write(out, _canonical_json(results))
    _write_manifest(
        "recommend",
        seed,
        [store_path, cells_path],
        [out],
        {"mode": args.mode, "k": args.k},
        started,
        out,
    )
    return EXIT_OK


def cmd_detect(args) -> int:
    started = time.perf_counter()
    store_path = _require_file(args.store, "store")
    try:
        bundle = load_store(store_path)
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise NetworkFormatError(f"{store_path}: invalid store: {exc}") from exc
    if len(bundle.store) < 2:
        raise NetworkFormatError(f"{store_path}: need at least 2 records to fit a forest")
    seed = args.seed if args.seed is not None else bundle.checkpoint.seed
    # Configs join the embedding features: corrupted settings are invisible
    # in the embedding coordinates, which derive from predictors only.
    rows = store_matrix(bundle.store, include_configs=True)
    forest = fit_forest(rows, t=100, psi=min(256, len(bundle.store)), seed=seed)
    report = score_network(bundle.store, forest, args.threshold, include_configs=True)
    payload = {
        "threshold": args.threshold,
        "cells": [
            {"cell_id": cid, "score": score, "flagged": score > args.threshold}
            for cid, score in report.sorted_by_score()
        ],
    }
    out = Path(args.out)
    _atomic_write(out, _canonical_json(payload))
    _write_manifest(
        "detect", seed, [store_path], [out], {"threshold": args.threshold}, started, out
    )
    logger.info("flagged %d of %d cells", len(report.flagged), len(bundle.store))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    started = time.perf_counter()
    network_path = _require_file(args.network, "network")
    graph = load_network(network_path)
    config = _load_run_config(args)
    result = compare_models(graph, config)
    out = Path(args.out)
    lines = ["model,type,split,accuracy"]
    for model, label, split_name, value in result.rows():
        lines.append(f"{model},{label},{split_name},{_float_repr(value)}")
    _atomic_write(out, "\n".join(lines) + "\n")
    outputs = [out]
    stem = out.stem
    for ev in result.models:
        proj_path = out.with_name(f"{stem}_{ev.model}_projection.csv")
        proj_lines = ["cell_id,pc1,pc2"]
        for cid, (pc1, pc2) in zip(ev.projection_ids, ev.projection.points):
            proj_lines.append(f"{cid},{_float_repr(pc1)},{_float_repr(pc2)}")
        _atomic_write(proj_path, "\n".join(proj_lines) + "\n")
        outputs.append(proj_path)
    inputs = [network_path] + ([Path(args.config)] if args.config else [])
    _write_manifest("evaluate", config.seed, inputs, outputs, {}, started, out)
    return EXIT_OK


def cmd_project(args) -> int:
    started = time.perf_counter()
    store_path = _require_file(args.store, "store")
    try:
        bundle = load_store(store_path)
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise NetworkFormatError(f"{store_path}: invalid store: {exc}") from exc
    projection = pca_project(bundle.store.embedding_matrix())
    out = Path(args.out)
    lines = ["cell_id,pc1,pc2"]
    for record, (pc1, pc2) in zip(bundle.store.records, projection.points):
        lines.append(f"{record.cell_id},{_float_repr(pc1)},{_float_repr(pc2)}")
    _atomic_write(out, "\n".join(lines) + "\n")
    _write_manifest("project", 0, [store_path], [out], {}, started, out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ranrec",
        description="Learn cell embeddings, recommend configurations, flag misconfigurations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic network")
    p.add_argument("spec", nargs="?", help="synth spec JSON (defaults apply if omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("network")
    p.add_argument("--config", default=None)
    p.add_argument("--model", choices=("sgnn", "gae"), default="sgnn")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed every network cell into a store")
    p.add_argument("network")
    p.add_argument("checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("recommend", help="recommend configurations for new cells")
    p.add_argument("store")
    p.add_argument("new_cells", metavar="new-cells")
    p.add_argument("--mode", choices=("closest", "majority"), default="closest")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("detect", help="score stored cells for misconfiguration")
    p.add_argument("store")
    p.add_argument("--threshold", type=float, default=0.6)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="compare untrained/gae/sgnn accuracy")
    p.add_argument("network")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("project", help="2-D projection of store embeddings")
    p.add_argument("store")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)

    return parser


def _setup_logging() -> None:
    level = os.environ.get("RANREC_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NetworkFormatError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # pragma: no cover - defensive
        logger.exception("unexpected failure")
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
