"""Experiment harness: config-driven runs and comparison sweeps.

One JSON document describes an experiment (data model, topology,
algorithm, step size, iteration budgets, seeds).  ``rsr run`` executes it
for every seed and writes JSON-lines diagnostics plus a summary; ``rsr
compare`` repeats that for several algorithms over an optional parameter
sweep.  Seeds are independent, so they are farmed out to worker processes
capped by the RSR_THREADS environment variable; results are reduced in
seed order, which keeps every output file byte-identical no matter how
many workers ran.  Wall-clock timings go to a separate file so the
deterministic outputs stay comparable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import rsr
from .consensus import ConsensusConfig, practical_step_size, write_diagnostics
from .data import (
    PartitionedDataset,
    SyntheticConfig,
    center_by_gmedian,
    generate_synthetic,
    load_csv,
    ose_sketch,
    partition,
    save_csv,
)
from .errors import ConfigurationError, CsvParseError, DrsrError
from .graph import CANNED_KINDS, NetworkGraph, canned_topology, generate_random_topology
from .local_solvers import GmsParams, LocalDataset, gmedian_local_solve
from .matops import fix_eigenvector_signs

ALGORITHMS = ("gms-cbga", "gms-cadmm", "pca-exact", "pca-cbga", "reaper",
              "fms", "gmedian")

_TOPOLOGY_SEED_OFFSET = 10_000


def worker_count() -> int:
    """Worker cap from RSR_THREADS, defaulting to the machine's cores."""
    raw = os.environ.get("RSR_THREADS", "")
    if not raw:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(f"RSR_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigurationError(f"RSR_THREADS must be >= 1, got {value}")
    return value


def _normalize_config(raw: dict, base_dir: Path) -> dict:
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    cfg = dict(raw)
    cfg["_base_dir"] = str(base_dir)
    algorithms = cfg.get("algorithms")
    algorithm = cfg.get("algorithm")
    if algorithms is None and algorithm is None:
        raise ConfigurationError("config needs an 'algorithm' (or 'algorithms') entry")
    for name in algorithms or [algorithm]:
        if name not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {name!r}; expected one of {ALGORITHMS}")
    data = cfg.get("data")
    if not isinstance(data, dict) or ("synthetic" not in data and "csv" not in data):
        raise ConfigurationError("config 'data' must hold a 'synthetic' model or a 'csv' path")
    if "csv" in data:
        csv_path = (base_dir / data["csv"]).resolve()
        if not csv_path.exists():
            raise ConfigurationError(f"csv dataset not found: {csv_path}")
        data = dict(data)
        data["csv"] = str(csv_path)
        if data.get("truth_csv"):
            truth_path = (base_dir / data["truth_csv"]).resolve()
            if not truth_path.exists():
                raise ConfigurationError(f"truth csv not found: {truth_path}")
            data["truth_csv"] = str(truth_path)
        cfg["data"] = data
    topology = cfg.get("topology", {"kind": "paper-random"})
    if "file" in topology:
        topo_path = (base_dir / topology["file"]).resolve()
        if not topo_path.exists():
            raise ConfigurationError(f"topology file not found: {topo_path}")
        topology = dict(topology)
        topology["file"] = str(topo_path)
    elif topology.get("kind") not in CANNED_KINDS:
        raise ConfigurationError(
            f"topology kind must be one of {CANNED_KINDS}, got {topology.get('kind')!r}")
    cfg["topology"] = topology
    step = cfg.get("step_size", "auto")
    if step != "auto" and not (isinstance(step, (int, float)) and step > 0):
        raise ConfigurationError(f"step_size must be positive or 'auto', got {step!r}")
    cfg["step_size"] = step
    cfg.setdefault("t_outer", 250)
    cfg.setdefault("t_inner", 30)
    cfg.setdefault("t_irls", 60)
    cfg.setdefault("delta", 1e-10)
    cfg.setdefault("warm_start", False)
    cfg.setdefault("record_every", 10)
    cfg.setdefault("step_size_horizon", 1)
    cfg.setdefault("preprocessing", {})
    seeds = cfg.setdefault("seeds", list(range(50)))
    if not seeds or len(set(seeds)) != len(seeds):
        raise ConfigurationError("'seeds' must be a nonempty list of distinct integers")
    if int(cfg["t_outer"]) < 1 or int(cfg["t_inner"]) < 1 or int(cfg["t_irls"]) < 1:
        raise ConfigurationError("iteration budgets must be >= 1")
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON in {path}: {exc}") from exc
    return _normalize_config(raw, path.resolve().parent)


def _materialize_data(cfg: dict, seed: int):
    """Build the per-seed dataset and (when known) the true subspace."""
    data_spec = cfg["data"]
    if "synthetic" in data_spec:
        synth = dict(data_spec["synthetic"])
        synth["seed"] = seed
        dataset, truth = generate_synthetic(SyntheticConfig(**synth))
        return dataset, truth
    points = load_csv(data_spec["csv"])
    node_count = int(data_spec.get("K", 1))
    dataset = partition(points, node_count, data_spec.get("partition", "contiguous"))
    truth = None
    if data_spec.get("truth_csv"):
        basis = load_csv(data_spec["truth_csv"])
        basis, _ = np.linalg.qr(basis)
        truth = rsr.Subspace(basis=fix_eigenvector_signs(basis))
    return dataset, truth


def _materialize_topology(cfg: dict, node_count: int, seed: int) -> NetworkGraph:
    topology = cfg["topology"]
    if "file" in topology:
        graph = NetworkGraph.load(topology["file"])
        if graph.node_count != node_count:
            raise ConfigurationError(
                f"topology has {graph.node_count} nodes but data has {node_count}")
        return graph
    kind = topology["kind"]
    topo_seed = topology.get("seed")
    if topo_seed is None:
        topo_seed = seed + _TOPOLOGY_SEED_OFFSET
    return canned_topology(kind, node_count, seed=int(topo_seed))


def _preprocess(cfg: dict, dataset: PartitionedDataset, truth, graph, seed: int):
    prep = cfg.get("preprocessing") or {}
    if prep.get("ose"):
        ose_spec = prep["ose"]
        if isinstance(ose_spec, dict):
            target = int(ose_spec["target_dim"])
            per_column = bool(ose_spec.get("per_column", False))
        else:
            target, per_column = int(ose_spec), False
        dataset = ose_sketch(dataset, target, seed=seed + 20_000, per_column=per_column)
        truth = None
    if prep.get("center"):
        center_cfg = ConsensusConfig(step_size=float(prep.get("center_step_size", 1.0)),
                                     t_outer=int(prep.get("center_iterations", 100)),
                                     record_every=10**9)
        dataset = center_by_gmedian(dataset, graph, float(cfg["delta"]), center_cfg)
    return dataset, truth


def _resolve_step_size(cfg: dict, dataset: PartitionedDataset, graph) -> float:
    step = cfg["step_size"]
    if step != "auto":
        return float(step)
    blocks = [LocalDataset(block) for block in dataset.blocks]
    return practical_step_size(blocks, graph, n=int(cfg["step_size_horizon"]),
                               delta=float(cfg["delta"]))


def run_single_seed(cfg: dict, algorithm: str, seed: int) -> dict:
    """Execute one algorithm for one seed; pure function of its arguments."""
    dataset, truth = _materialize_data(cfg, seed)
    graph = _materialize_topology(cfg, dataset.node_count, seed)
    dataset, truth = _preprocess(cfg, dataset, truth, graph, seed)
    delta = float(cfg["delta"])
    params = GmsParams(delta=delta, t_gms=int(cfg["t_inner"]),
                       warm_start=bool(cfg["warm_start"]))
    started = time.perf_counter()
    step_size = None
    if algorithm in ("gms-cbga", "gms-cadmm", "pca-cbga", "gmedian"):
        step_size = _resolve_step_size(cfg, dataset, graph)
        consensus_cfg = ConsensusConfig(step_size=step_size,
                                        t_outer=int(cfg["t_outer"]),
                                        record_every=int(cfg["record_every"]))
    if algorithm == "gms-cbga":
        result = rsr.distributed_gms(dataset, graph, int(cfg["d"]), "cbga",
                                     consensus_cfg, params, truth=truth)
    elif algorithm == "gms-cadmm":
        result = rsr.distributed_gms(dataset, graph, int(cfg["d"]), "cadmm",
                                     consensus_cfg, params, truth=truth)
    elif algorithm == "pca-exact":
        result = rsr.distributed_pca_exact(dataset, graph, int(cfg["d"]))
        if truth is not None:
            err = rsr.recovery_error(result.per_node_subspaces[0], truth)
            for record in result.diagnostics:
                record["recovery_error"] = err
    elif algorithm == "pca-cbga":
        result = rsr.distributed_pca_cbga(dataset, graph, int(cfg["d"]),
                                          consensus_cfg, truth=truth)
    elif algorithm == "reaper":
        result = rsr.distributed_reaper(dataset, graph, int(cfg["d"]), delta,
                                        int(cfg["t_irls"]), truth=truth)
    elif algorithm == "fms":
        result = rsr.distributed_fms(dataset, graph, int(cfg["d"]), delta,
                                     int(cfg["t_irls"]), truth=truth)
    elif algorithm == "gmedian":
        run = rsr.distributed_gmedian(dataset, graph, consensus_cfg, delta)
        reference = gmedian_local_solve(
            LocalDataset(dataset.pooled(), require_full_rank=False),
            np.zeros(dataset.ambient_dim), delta, 1000)
        for record in run.records:
            record["recovery_error"] = float(np.linalg.norm(
                run.states[record["k"] - 1].q - reference))
        final = [float(np.linalg.norm(state.q - reference)) for state in run.states]
        return {"seed": seed, "records": run.records,
                "final_errors": final, "step_size": run.step_size,
                "halvings": run.halvings,
                "wall_time": time.perf_counter() - started}
    else:
        raise ConfigurationError(f"unknown algorithm {algorithm!r}")
    final_records = [r for r in result.diagnostics
                     if r["s"] == max(rec["s"] for rec in result.diagnostics)]
    final = [r["recovery_error"] for r in final_records]
    if truth is not None and any(v is None for v in final):
        final = [rsr.recovery_error(s, truth) for s in result.per_node_subspaces]
    return {"seed": seed, "records": result.diagnostics,
            "final_errors": final, "step_size": result.step_size,
            "halvings": result.halvings,
            "wall_time": time.perf_counter() - started}


def _run_seed_star(args):
    return run_single_seed(*args)


def _run_all_seeds(cfg: dict, algorithm: str) -> list[dict]:
    seeds = [int(s) for s in cfg["seeds"]]
    workers = min(worker_count(), len(seeds))
    tasks = [(cfg, algorithm, seed) for seed in seeds]
    if workers <= 1:
        return [run_single_seed(*task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_seed_star, tasks))


def _curve(per_seed: list[dict]):
    """Mean recovery error per recorded iteration, averaged over seeds and nodes."""
    by_iteration: dict[int, list[float]] = {}
    for outcome in per_seed:
        for record in outcome["records"]:
            if record["recovery_error"] is not None:
                by_iteration.setdefault(record["s"], []).append(record["recovery_error"])
    return [[s, float(np.mean(vals))] for s, vals in sorted(by_iteration.items())]


def _summarize(cfg: dict, algorithm: str, per_seed: list[dict]) -> dict:
    finals = []
    for outcome in per_seed:
        values = [v for v in outcome["final_errors"] if v is not None]
        if values:
            finals.append(float(np.mean(values)))
    public_cfg = {k: v for k, v in cfg.items() if not k.startswith("_")}
    return {
        "algorithm": algorithm,
        "config": public_cfg,
        "seeds": [outcome["seed"] for outcome in per_seed],
        "effective_step_size": {str(o["seed"]): o["step_size"] for o in per_seed},
        "halvings": {str(o["seed"]): o["halvings"] for o in per_seed},
        "per_iteration_mean_error": _curve(per_seed),
        "final_error_per_seed": {str(o["seed"]): (float(np.mean(o["final_errors"]))
                                                  if o["final_errors"] and o["final_errors"][0] is not None
                                                  else None)
                                 for o in per_seed},
        "final_error_mean": float(np.mean(finals)) if finals else None,
        "final_error_median": float(np.median(finals)) if finals else None,
    }


def _write_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _output_dir(cfg: dict, override: str | None) -> Path:
    target = override or cfg.get("output")
    if not target:
        raise ConfigurationError("config needs an 'output' directory (or pass --out)")
    base = Path(cfg["_base_dir"])
    out = Path(target)
    if not out.is_absolute():
        out = base / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_experiment(cfg: dict, out_override: str | None = None,
                   csv: bool = False) -> Path:
    """Run the configured algorithm over all seeds and write the artifacts."""
    algorithm = cfg.get("algorithm")
    if algorithm is None:
        raise ConfigurationError("'rsr run' needs a single 'algorithm' entry")
    out = _output_dir(cfg, out_override)
    per_seed = _run_all_seeds(cfg, algorithm)
    records = []
    for outcome in per_seed:
        for record in outcome["records"]:
            row = dict(record)
            row["seed"] = outcome["seed"]
            records.append(row)
    write_diagnostics(records, out / "diagnostics.jsonl")
    summary = _summarize(cfg, algorithm, per_seed)
    _write_json(summary, out / "summary.json")
    _write_json({"wall_time_per_seed": {str(o["seed"]): o["wall_time"] for o in per_seed},
                 "total_wall_time": sum(o["wall_time"] for o in per_seed)},
                out / "timings.json")
    if csv:
        with open(out / "summary_curve.csv", "w") as handle:
            handle.write("iteration,mean_recovery_error\n")
            for s, value in summary["per_iteration_mean_error"]:
                handle.write(f"{s},{value!r}\n")
    return out


def _apply_sweep(cfg: dict, param: str, value) -> dict:
    swept = json.loads(json.dumps({k: v for k, v in cfg.items() if not k.startswith("_")}))
    swept["_base_dir"] = cfg["_base_dir"]
    if "synthetic" not in swept.get("data", {}):
        raise ConfigurationError("sweeps require a synthetic data model")
    model = swept["data"]["synthetic"]
    if param == "sigma":
        model["sigma"] = float(value)
    elif param == "outlier_percent":
        n0 = int(model["N0"])
        node_count = int(model["K"])
        fraction = float(value) / 100.0
        if not 0.0 < fraction < 1.0:
            raise ConfigurationError(f"outlier_percent must be in (0, 100), got {value}")
        n1 = max(node_count, int(round(n0 * (1.0 - fraction) / fraction / node_count)) * node_count)
        model["N1"] = n1
    else:
        raise ConfigurationError(f"unknown sweep parameter {param!r}")
    return swept


def compare_algorithms(cfg: dict, out_override: str | None = None,
                       csv: bool = False) -> Path:
    """Run several algorithms (optionally over a sweep) and tabulate."""
    algorithms = cfg.get("algorithms")
    if not algorithms or len(algorithms) < 2:
        raise ConfigurationError("'rsr compare' needs an 'algorithms' list with >= 2 entries")
    sweep = cfg.get("sweep") or {"param": None, "values": [None]}
    param, values = sweep.get("param"), sweep.get("values", [None])
    out = _output_dir(cfg, out_override)
    rows, timings = [], []
    for value in values:
        swept = cfg if param is None else _apply_sweep(cfg, param, value)
        for algorithm in algorithms:
            started = time.perf_counter()
            per_seed = _run_all_seeds(swept, algorithm)
            elapsed = time.perf_counter() - started
            summary = _summarize(swept, algorithm, per_seed)
            rows.append({
                "algorithm": algorithm,
                "sweep_param": param,
                "sweep_value": value,
                "final_error_mean": summary["final_error_mean"],
                "final_error_median": summary["final_error_median"],
            })
            timings.append({"algorithm": algorithm, "sweep_value": value,
                            "wall_time": elapsed})
    public_cfg = {k: v for k, v in cfg.items() if not k.startswith("_")}
    _write_json({"config": public_cfg, "rows": rows}, out / "table.json")
    _write_json({"rows": timings}, out / "timings.json")
    if csv:
        with open(out / "table.csv", "w") as handle:
            handle.write("algorithm,sweep_param,sweep_value,final_error_mean,final_error_median\n")
            for row in rows:
                handle.write(",".join(repr(row[c]) if row[c] is not None else ""
                                      for c in ("algorithm", "sweep_param", "sweep_value",
                                                "final_error_mean", "final_error_median"))
                             + "\n")
    width = max(len(a) for a in algorithms)
    for row, timing in zip(rows, timings):
        mean = row["final_error_mean"]
        print(f"{row['algorithm']:<{width}}  sweep={row['sweep_value']!s:<8} "
              f"mean={mean if mean is None else f'{mean:.6g}':<12} "
              f"median={row['final_error_median'] if row['final_error_median'] is None else f'{row['final_error_median']:.6g}':<12} "
              f"wall={timing['wall_time']:.2f}s")
    return out


def _cmd_gen(args) -> int:
    cfg = load_config(args.config)
    data_spec = cfg.get("data", {})
    if "synthetic" not in data_spec:
        raise ConfigurationError("'rsr gen' needs a synthetic data model")
    out = _output_dir(cfg, args.out)
    seed = int(cfg["seeds"][0])
    synth = dict(data_spec["synthetic"])
    synth["seed"] = seed
    dataset, truth = generate_synthetic(SyntheticConfig(**synth))
    for k, block in enumerate(dataset.blocks, start=1):
        save_csv(block, out / f"block_{k:02d}.csv")
    save_csv(truth.basis, out / "truth_basis.csv")
    _write_json({"model": synth, "blocks": dataset.node_count,
                 "ambient_dim": dataset.ambient_dim}, out / "meta.json")
    print(f"wrote {dataset.node_count} blocks to {out}")
    return 0


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = run_experiment(cfg, args.out, csv=args.csv)
    print(f"wrote {out / 'summary.json'}")
    return 0


def _cmd_compare(args) -> int:
    cfg = load_config(args.config)
    out = compare_algorithms(cfg, args.out, csv=args.csv)
    print(f"wrote {out / 'table.json'}")
    return 0


def _cmd_topo(args) -> int:
    if args.kind == "paper-random" and args.seed is None:
        graph = generate_random_topology(args.k, 0.5, 0)
    elif args.kind == "paper-random":
        graph = generate_random_topology(args.k, 0.5, args.seed)
    else:
        graph = canned_topology(args.kind, args.k, seed=args.seed or 0)
    graph.save(args.out)
    print(f"wrote {args.out} ({graph.node_count} nodes, {graph.edge_count} edges)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rsr",
        description="Decentralized robust subspace recovery experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="materialize a synthetic dataset as CSV blocks")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", default=None)
    gen.set_defaults(func=_cmd_gen)

    run = sub.add_parser("run", help="run one algorithm over all seeds")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None)
    run.add_argument("--csv", action="store_true", help="also emit flat CSV curves")
    run.set_defaults(func=_cmd_run)

    compare = sub.add_parser("compare", help="run several algorithms and tabulate")
    compare.add_argument("--config", required=True)
    compare.add_argument("--out", default=None)
    compare.add_argument("--csv", action="store_true")
    compare.set_defaults(func=_cmd_compare)

    topo = sub.add_parser("topo", help="write a topology JSON file")
    topo.add_argument("--kind", required=True, choices=CANNED_KINDS)
    topo.add_argument("--k", required=True, type=int)
    topo.add_argument("--seed", type=int, default=None)
    topo.add_argument("--out", required=True)
    topo.set_defaults(func=_cmd_topo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, CsvParseError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DrsrError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
