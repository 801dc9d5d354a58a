"""Config-driven experiment runner.

Subcommands:

* ``run --config cfg.yaml [--seed N] [--out DIR]`` — one scenario, the
  configured filter roster, WAV/CSV/JSON outputs plus a manifest.
* ``batch --config cfg.yaml [--out DIR] [--jobs N]`` — a grid of seeds,
  SER values, and nonlinearities; per-cell manifests, a summary CSV, and
  mean-over-cells ERLE traces.
* ``compare manifest...`` — per-metric, per-section deltas between runs
  of identical scenarios, with sign counts across seeds.

Outputs are deterministic given (config, seed); only the wall-clock
timings recorded in manifests vary between repeat runs. Set ``AECLAB_LOG``
to ``debug``/``info``/``warning`` to control verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .audio_io import (
    AudioBuffer,
    ExperimentConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    save_config,
    write_wav,
)
from .errors import ConfigurationError
from .runner import FilterRun, make_scenario, run_filter

log = logging.getLogger("aeclab")


def _setup_logging():
    level = os.environ.get("AECLAB_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _float_repr(value: float) -> str:
    return repr(float(value))


def write_trace_csv(path, header: str, values, start_index: int = 0) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(header + "\n")
        for index, value in enumerate(values, start=start_index):
            handle.write(f"{index},{_float_repr(value)}\n")


def read_trace_csv(path) -> np.ndarray:
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    if data.size == 0:
        return np.empty(0)
    return np.atleast_2d(data)[:, 1]


def scenario_fingerprint(config: ExperimentConfig, seed: int) -> str:
    payload = {"seed": seed}
    if config.scenario is not None:
        scenario = dataclasses.replace(config.scenario, seed=seed)
        cfg = dataclasses.replace(config, scenario=scenario)
        payload["scenario"] = config_to_dict(cfg).get("scenario")
    if config.inputs is not None:
        payload["inputs"] = config_to_dict(config).get("inputs")
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _sections_payload(entries) -> list:
    return [dict(entry) for entry in entries] if entries else []


def run_experiment(
    config: ExperimentConfig, out_dir, seed: int | None = None
) -> dict:
    """Execute one configured run; returns the manifest mapping."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = config.seed if seed is None else int(seed)
    started = time.time()

    if config.scenario is not None and seed != config.scenario.seed:
        config = dataclasses.replace(
            config, scenario=dataclasses.replace(config.scenario, seed=seed), seed=seed
        )
    elif seed != config.seed:
        config = dataclasses.replace(config, seed=seed)

    save_config(config, out / "run_config.yaml")
    scenario = make_scenario(config, seed=seed)
    fs = scenario.sample_rate

    if config.save_scenario:
        comp_dir = out / "scenario"
        comp_dir.mkdir(exist_ok=True)
        for name, signal in (
            ("reference", scenario.reference),
            ("loudspeaker", scenario.loudspeaker),
            ("echo", scenario.echo),
            ("near_speech", scenario.near_speech),
            ("noise", scenario.noise),
            ("microphone", scenario.microphone),
        ):
            write_wav(AudioBuffer(signal, fs), comp_dir / f"{name}.wav")

    manifest = {
        "version": __version__,
        "seed": seed,
        "fingerprint": scenario_fingerprint(config, seed),
        "config": config_to_dict(config),
        "sections": [
            {"kind": kind, "start": start, "stop": stop}
            for kind, start, stop in scenario.sections
        ],
        "filters": {},
        "status": "ok",
        "timings": {},
    }

    for name in config.filters:
        filter_started = time.time()
        log.info("running filter %s", name)
        result = run_filter(name, config, scenario)
        filter_dir = out / name
        filter_dir.mkdir(exist_ok=True)
        peak = float(np.max(np.abs(result.error))) if len(result.error) else 0.0
        scale = 1.0 / peak if peak > 1.0 else 1.0
        write_wav(
            AudioBuffer(result.error * scale, fs), filter_dir / "error.wav"
        )
        write_trace_csv(
            filter_dir / "erle.csv", "sample_index,erle_db", result.erle_trace
        )
        if result.misalignment_trace is not None:
            write_trace_csv(
                filter_dir / "misalignment.csv",
                "frame_index,misalignment_db",
                result.misalignment_trace,
            )
        aggregates = {
            "erle_sections": _sections_payload(result.erle_sections),
            "misalignment_sections": _sections_payload(result.misalignment_sections),
            "misalignment_truncated": result.misalignment_truncated,
            "log_mse_db": result.log_mse,
            "diagnostics": result.diagnostics,
        }
        with open(filter_dir / "aggregates.json", "w", encoding="utf-8") as handle:
            json.dump(aggregates, handle, sort_keys=True, indent=2)
            handle.write("\n")
        outputs = {
            "error_wav": str(filter_dir / "error.wav"),
            "erle_csv": str(filter_dir / "erle.csv"),
            "aggregates_json": str(filter_dir / "aggregates.json"),
        }
        if result.misalignment_trace is not None:
            outputs["misalignment_csv"] = str(filter_dir / "misalignment.csv")
        manifest["filters"][name] = {
            "outputs": outputs,
            "aggregates": aggregates,
            "error_scale": scale,
        }
        manifest["timings"][name] = time.time() - filter_started

    manifest["timings"]["total"] = time.time() - started
    with open(out / "manifest.json", "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, sort_keys=True, indent=2)
        handle.write("\n")
    return manifest


def _grid_cells(grid: dict, config: ExperimentConfig) -> list[dict]:
    seeds = grid.get("seeds", [config.seed])
    sers = grid.get("ser_db", [None])
    nonlinearities = grid.get("nonlinearity", [None])
    cells = []
    for seed in seeds:
        for ser in sers:
            for kind in nonlinearities:
                cells.append({"seed": int(seed), "ser_db": ser, "nonlinearity": kind})
    return cells


def _cell_config(config: ExperimentConfig, cell: dict) -> ExperimentConfig:
    scenario = config.scenario
    if scenario is None:
        raise ConfigurationError("batch grids require a generated scenario")
    updates = {"seed": cell["seed"]}
    if cell["ser_db"] is not None:
        updates["ser_db"] = float(cell["ser_db"])
    if cell["nonlinearity"] is not None:
        updates["nonlinearity"] = dataclasses.replace(
            scenario.nonlinearity, kind=cell["nonlinearity"]
        )
    scenario = dataclasses.replace(scenario, **updates)
    return dataclasses.replace(config, scenario=scenario, seed=cell["seed"])


def _run_cell(args):
    config_dict, cell, cell_dir = args
    config = config_from_dict(config_dict)
    config = _cell_config(config, cell)
    try:
        manifest = run_experiment(config, cell_dir, seed=cell["seed"])
        return cell, str(cell_dir), manifest, None
    except Exception as exc:  # cell failures recorded, batch continues
        return cell, str(cell_dir), None, f"{type(exc).__name__}: {exc}"


def run_batch(config: ExperimentConfig, grid: dict, out_dir, jobs: int = 1) -> dict:
    """Run every grid cell, write the summary CSV and mean ERLE traces."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = _grid_cells(grid, config)
    config_dict = config_to_dict(config)

    tasks = []
    for index, cell in enumerate(cells):
        label = f"cell_{index:03d}_seed{cell['seed']}"
        if cell["ser_db"] is not None:
            label += f"_ser{cell['ser_db']:+g}"
        if cell["nonlinearity"] is not None:
            label += f"_{cell['nonlinearity']}"
        tasks.append((config_dict, cell, out / label))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(task) for task in tasks]

    rows = []
    failures = []
    traces: dict[str, list[np.ndarray]] = {}
    for cell, cell_dir, manifest, failure in results:
        if failure is not None:
            failures.append({"cell": cell, "dir": cell_dir, "error": failure})
            continue
        for name, info in manifest["filters"].items():
            for entry in info["aggregates"]["erle_sections"]:
                rows.append(
                    {
                        "cell_dir": cell_dir,
                        "seed": cell["seed"],
                        "ser_db": cell["ser_db"],
                        "nonlinearity": cell["nonlinearity"],
                        "filter": name,
                        "section": entry["kind"],
                        "erle_mean_db": entry["mean"],
                        "erle_final_db": entry["final_mean"],
                        "log_mse_db": info["aggregates"]["log_mse_db"],
                    }
                )
            trace = read_trace_csv(Path(cell_dir) / name / "erle.csv")
            traces.setdefault(name, []).append(trace)

    summary_path = out / "summary.csv"
    header = (
        "cell_dir,seed,ser_db,nonlinearity,filter,section,"
        "erle_mean_db,erle_final_db,log_mse_db"
    )
    with open(summary_path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(header + "\n")
        for row in rows:
            handle.write(
                ",".join(
                    [
                        row["cell_dir"],
                        str(row["seed"]),
                        "" if row["ser_db"] is None else str(row["ser_db"]),
                        "" if row["nonlinearity"] is None else str(row["nonlinearity"]),
                        row["filter"],
                        row["section"],
                        "" if row["erle_mean_db"] is None else _float_repr(row["erle_mean_db"]),
                        "" if row["erle_final_db"] is None else _float_repr(row["erle_final_db"]),
                        _float_repr(row["log_mse_db"]),
                    ]
                )
                + "\n"
            )

    # mean-over-cells columns per filter and section
    means: dict = {}
    for row in rows:
        key = (row["filter"], row["section"])
        means.setdefault(key, []).append(row)
    mean_rows = []
    for (name, section) in sorted(means):
        group = means[(name, section)]
        valid = [r for r in group if r["erle_mean_db"] is not None]
        mean_rows.append(
            {
                "filter": name,
                "section": section,
                "cells": len(group),
                "erle_mean_db": float(np.mean([r["erle_mean_db"] for r in valid]))
                if valid
                else None,
                "erle_final_db": float(np.mean([r["erle_final_db"] for r in valid]))
                if valid
                else None,
            }
        )
    with open(out / "summary_means.csv", "w", encoding="utf-8", newline="\n") as handle:
        handle.write("filter,section,cells,erle_mean_db,erle_final_db\n")
        for row in mean_rows:
            handle.write(
                f"{row['filter']},{row['section']},{row['cells']},"
                f"{'' if row['erle_mean_db'] is None else _float_repr(row['erle_mean_db'])},"
                f"{'' if row['erle_final_db'] is None else _float_repr(row['erle_final_db'])}\n"
            )

    for name, cell_traces in sorted(traces.items()):
        shortest = min(len(t) for t in cell_traces)
        stacked = np.stack([t[:shortest] for t in cell_traces])
        write_trace_csv(
            out / f"erle_mean_{name}.csv",
            "sample_index,erle_db",
            np.mean(stacked, axis=0),
        )

    batch_manifest = {
        "version": __version__,
        "cells": len(cells),
        "failures": failures,
        "summary_csv": str(summary_path),
        "mean_rows": mean_rows,
    }
    with open(out / "batch.json", "w", encoding="utf-8") as handle:
        json.dump(batch_manifest, handle, sort_keys=True, indent=2)
        handle.write("\n")
    return batch_manifest


def compare_manifests(paths) -> dict:
    """Per-filter, per-section metric deltas against the first manifest of
    each seed group, with sign counts across seeds."""
    manifests = []
    for path in paths:
        with open(path, "r", encoding="utf-8") as handle:
            manifests.append((str(path), json.load(handle)))

    groups: dict = {}
    order = []
    for path, manifest in manifests:
        key = manifest["fingerprint"]
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append((path, manifest))

    scenarios = {m["fingerprint"] for _, m in manifests}
    seeds = {m["seed"] for _, m in manifests}
    if len(scenarios) != len({(m["seed"], m["fingerprint"]) for _, m in manifests}):
        raise ConfigurationError(
            "manifests mix different scenarios for the same seed"
        )
    if len(seeds) < len(scenarios):
        raise ConfigurationError("manifests compare different scenarios")

    deltas: dict = {}
    for key in order:
        group = groups[key]
        base_path, base = group[0]
        candidates = group[1:] if len(group) > 1 else [group[0]]
        for other_path, other in candidates:
            shared = set(base["filters"]) | set(other["filters"])
            pairs = []
            base_names = list(base["filters"])
            other_names = list(other["filters"])
            for a_name in base_names:
                for b_name in other_names:
                    if other_path == base_path and a_name == b_name:
                        pairs.append((a_name, b_name))
                    elif a_name == b_name and other_path != base_path:
                        pairs.append((a_name, b_name))
            if not pairs and other_path != base_path:
                # disjoint rosters: compare across filters pairwise
                pairs = [(a, b) for a in base_names for b in other_names]
            for a_name, b_name in pairs:
                a_sections = base["filters"][a_name]["aggregates"]["erle_sections"]
                b_sections = other["filters"][b_name]["aggregates"]["erle_sections"]
                for a_entry, b_entry in zip(a_sections, b_sections):
                    if a_entry["mean"] is None or b_entry["mean"] is None:
                        continue
                    label = (f"{b_name}-vs-{a_name}", a_entry["kind"], "erle_mean_db")
                    deltas.setdefault(label, []).append(
                        b_entry["mean"] - a_entry["mean"]
                    )
                    label = (f"{b_name}-vs-{a_name}", a_entry["kind"], "erle_final_db")
                    deltas.setdefault(label, []).append(
                        b_entry["final_mean"] - a_entry["final_mean"]
                    )

    report = []
    for (pair, section, metric) in sorted(deltas):
        values = deltas[(pair, section, metric)]
        report.append(
            {
                "pair": pair,
                "section": section,
                "metric": metric,
                "count": len(values),
                "mean_delta": float(np.mean(values)),
                "positive": int(sum(v > 0 for v in values)),
                "negative": int(sum(v < 0 for v in values)),
            }
        )
    return {"groups": len(groups), "deltas": report}


# ---------------------------------------------------------------------------
# argparse front-end
# ---------------------------------------------------------------------------


def _cmd_run(args) -> int:
    config = load_config(args.config)
    out_dir = args.out if args.out else config.out_dir
    manifest = run_experiment(config, out_dir, seed=args.seed)
    print(json.dumps({"manifest": str(Path(out_dir) / "manifest.json"),
                      "status": manifest["status"]}))
    return 0


def _cmd_batch(args) -> int:
    with open(args.config, "r", encoding="utf-8") as handle:
        raw = yaml.safe_load(handle) or {}
    grid = raw.pop("grid", {}) or {}
    config = config_from_dict(raw)
    out_dir = args.out if args.out else config.out_dir
    manifest = run_batch(config, grid, out_dir, jobs=args.jobs)
    print(
        json.dumps(
            {
                "batch": str(Path(out_dir) / "batch.json"),
                "cells": manifest["cells"],
                "failures": len(manifest["failures"]),
            }
        )
    )
    return 0 if not manifest["failures"] else 1


def _cmd_compare(args) -> int:
    report = compare_manifests(args.manifests)
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aeclab",
        description="Adaptive echo cancellation experiments: run, batch, compare.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one configured experiment")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--out", default=None)
    run_p.set_defaults(func=_cmd_run)

    batch_p = sub.add_parser("batch", help="run a grid of experiments")
    batch_p.add_argument("--config", required=True)
    batch_p.add_argument("--out", default=None)
    batch_p.add_argument("--jobs", type=int, default=1)
    batch_p.set_defaults(func=_cmd_batch)

    cmp_p = sub.add_parser("compare", help="compare run manifests")
    cmp_p.add_argument("manifests", nargs="+")
    cmp_p.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stdout,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
