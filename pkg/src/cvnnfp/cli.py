"""Command-line interface: synth, slice, run, sweep, report.

Results are appended to a delimiter-separated text file with a versioned
header; one row per (experiment cell, split). Reruns with --resume skip
split indices already present. Flag values override config-file values,
which override defaults; CVNNFP_WORKERS overrides the worker count only.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import datapipe, models, synthgen, trainer
from .datapipe import SCENARIOS, DataError, ScenarioSpec, custom_scenario
from .models import AblationConfig

RESULTS_HEADER = "# cvnnfp results v1"
RESULTS_COLUMNS = ["scenario", "model", "input_mode", "ablation",
                   "split_index", "accuracy", "seed", "timestamp"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAINING = 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------

def _resolve_scenario(args) -> ScenarioSpec:
    name = args.scenario
    if name == "custom":
        if args.k is None or args.m is None or args.p is None:
            raise UsageError("--scenario custom requires --k, --m and --p")
        return custom_scenario(args.k, args.m, args.p)
    spec = SCENARIOS[name]
    # allow overriding preset sizes explicitly
    if args.k or args.m or args.p:
        return ScenarioSpec(name, args.k or spec.num_devices,
                            args.m or spec.transmissions,
                            args.p or spec.partitions)
    return spec


def _hyperparams(args) -> trainer.Hyperparams:
    return trainer.Hyperparams(optimizer=args.optimizer,
                               learning_rate=args.lr,
                               batch_size=args.batch,
                               epochs=args.epochs,
                               seed=args.seed,
                               precision=args.precision)


def _workers(args) -> int:
    env = os.environ.get("CVNNFP_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, args.workers)


# ---------------------------------------------------------------------
# results file
# ---------------------------------------------------------------------

def _append_rows(path: Path, rows: list[dict]) -> None:
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        if new:
            fh.write(RESULTS_HEADER + "\n")
            fh.write(",".join(RESULTS_COLUMNS) + "\n")
        w = csv.writer(fh)
        for row in rows:
            w.writerow([row[c] for c in RESULTS_COLUMNS])


def read_results(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"results file {path} does not exist")
    rows = []
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != RESULTS_HEADER:
            raise DataError(f"{path}: unrecognized results header {first!r}")
        reader = csv.DictReader(fh)
        for i, raw in enumerate(reader):
            try:
                raw["split_index"] = int(raw["split_index"])
                raw["accuracy"] = float(raw["accuracy"])
                rows.append(raw)
            except (TypeError, ValueError, KeyError):
                print(f"warning: skipping malformed row {i + 2} in {path}",
                      file=sys.stderr)
    return rows


def _completed_splits(path: Path, scenario, model, mode, ablation) -> set[int]:
    if not path.exists():
        return set()
    done = set()
    for row in read_results(path):
        if (row["scenario"], row["model"], row["input_mode"], row["ablation"]) == \
                (scenario, model, mode, ablation):
            done.add(row["split_index"])
    return done


# ---------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = _resolve_scenario(args)
    out_dir = Path(args.data_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.task == "crossterm":
        recs = synthgen.generate_crossterm_task(spec.num_devices, args.seed,
                                                partitions=spec.partitions)
    else:
        sc = synthgen.SynthScenario(num_devices=spec.num_devices,
                                    transmissions=spec.transmissions,
                                    partitions=spec.partitions,
                                    noise_snr_db=args.snr,
                                    seed=args.seed)
        recs = synthgen.generate_scenario(sc)
    for (dev, tx), rec in sorted(recs.items()):
        data_path, meta_path = datapipe.recording_paths(out_dir, dev, tx)
        datapipe.write_recording(rec, data_path, meta_path)
    print(f"wrote {len(recs)} recordings to {out_dir}")
    return EXIT_OK


def cmd_slice(args) -> int:
    spec = _resolve_scenario(args)
    recs = datapipe.load_scenario_recordings(args.data_dir, spec)
    paths = datapipe.write_manifests(spec, recs, args.out_dir)
    print(f"wrote {len(paths)} split manifests to {args.out_dir}")
    return EXIT_OK


def _load_manifests(manifest_dir: Path) -> list[dict]:
    paths = sorted(Path(manifest_dir).glob("split*.json"))
    if not paths:
        raise DataError(f"no split manifests in {manifest_dir}")
    return [json.loads(p.read_text()) for p in paths]


def _run_cell(args, spec, recs, manifests, model_kind, mode, ablation,
              hp, out_path) -> trainer.Aggregate | None:
    """Train one (model, mode, ablation) cell over all splits, appending rows."""
    cell = (spec.name, model_kind, mode, ablation.name)
    done = _completed_splits(out_path, *cell) if args.resume else set()
    todo = [m["split_index"] for m in manifests if m["split_index"] not in done]
    results = []

    def on_result(res):
        results.append(res)
        _append_rows(out_path, [{
            "scenario": spec.name, "model": model_kind, "input_mode": mode,
            "ablation": ablation.name, "split_index": res.split_index,
            "accuracy": f"{res.test_accuracy:.10f}", "seed": hp.seed,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }])

    by_index = {m["split_index"]: m for m in manifests}
    workers = _workers(args)

    def run_one(s):
        split = datapipe.split_from_manifest(by_index[s], recs)
        model = models.build_model(model_kind, spec.num_devices,
                                   trainer._model_seed(hp.seed, s), dtype=hp.dtype)
        if ablation.enabled:
            models.apply_ablation(model, ablation)
        return trainer.train_on_split(model, split, mode, hp)

    if workers <= 1 or len(todo) <= 1:
        for s in todo:
            on_result(run_one(s))
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [(s, pool.submit(run_one, s)) for s in todo]
            for s, fut in futs:
                on_result(fut.result())

    all_rows = [r for r in read_results(out_path)
                if (r["scenario"], r["model"], r["input_mode"], r["ablation"]) == cell]
    if not all_rows:
        return None
    accs = [r["accuracy"] for r in all_rows]
    mean = float(np.mean(accs))
    std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
    print(f"{model_kind} mode={mode} ablation={ablation.name}: "
          f"mean {mean:.4f} sigma {std:.4f} over {len(accs)} splits")
    return None


def cmd_run(args) -> int:
    spec = _resolve_scenario(args)
    ablation = AblationConfig.parse(args.ablate)
    model_kind = args.model.upper()
    if ablation.enabled and model_kind != "CVNN":
        raise UsageError("ablation is only defined for the CVNN")
    if args.mode.upper() not in datapipe.INPUT_MODES:
        raise UsageError(f"bad input mode {args.mode!r}")
    hp = _hyperparams(args)
    recs = datapipe.load_scenario_recordings(args.data_dir, spec)
    manifests = _load_manifests(args.manifest_dir)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _run_cell(args, spec, recs, manifests, model_kind, args.mode.upper(),
              ablation, hp, out_path)
    return EXIT_OK


def sweep_cells() -> list[tuple[str, str, str]]:
    """(model, mode, ablation) for the full experiment matrix: 12 unablated
    cells plus the 12 ablations under IQ and RT for the CVNN (36 total)."""
    cells = [(kind, mode, "NONE")
             for kind in ("RVNN", "CVNN")
             for mode in ("I", "Q", "IQ", "R", "T", "RT")]
    cells += [("CVNN", mode, cfg.name)
              for mode in ("IQ", "RT")
              for cfg in AblationConfig.all_ablations()]
    return cells


def cmd_sweep(args) -> int:
    cells = sweep_cells()
    if args.dry_run:
        for kind, mode, abl in cells:
            print(f"{kind} mode={mode} ablation={abl}")
        print(f"{len(cells)} cells")
        return EXIT_OK
    spec = _resolve_scenario(args)
    hp = _hyperparams(args)
    recs = datapipe.load_scenario_recordings(args.data_dir, spec)
    manifests = _load_manifests(args.manifest_dir)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    failures = 0
    for kind, mode, abl in cells:
        try:
            _run_cell(args, spec, recs, manifests, kind, mode,
                      AblationConfig.parse(abl), hp, out_path)
        except RuntimeError as exc:
            failures += 1
            print(f"cell {kind}/{mode}/{abl} failed: {exc}", file=sys.stderr)
    if failures:
        print(f"{failures} cells failed", file=sys.stderr)
        return EXIT_TRAINING
    return EXIT_OK


def _cell_order_key(row: dict):
    """Group cells in the figure order: plain model comparison first, then
    input-mode studies, then ablations by mode."""
    model_rank = {"RVNN": 0, "CVNN": 1}
    mode_rank = {"IQ": 0, "I": 1, "Q": 2, "RT": 3, "R": 4, "T": 5}
    abl = row["ablation"]
    abl_rank = 0 if abl == "NONE" else 1 + sorted(
        c.name for c in AblationConfig.all_ablations()).index(abl)
    return (abl_rank != 0, mode_rank.get(row["input_mode"], 99),
            model_rank.get(row["model"], 99), abl_rank)


def cmd_report(args) -> int:
    rows = read_results(args.results)
    if not rows:
        raise DataError(f"no usable rows in {args.results}")
    cells: dict[tuple, list[float]] = {}
    for row in rows:
        key = (row["scenario"], row["model"], row["input_mode"], row["ablation"])
        cells.setdefault(key, []).append(row["accuracy"])
    keyed = sorted(cells.items(), key=lambda kv: _cell_order_key(
        dict(zip(("scenario", "model", "input_mode", "ablation"), kv[0]))))
    plot_path = Path(args.plot_data) if args.plot_data else None
    plot_lines = ["label\tmean\tsigma"]
    print(f"{'cell':40s} {'n':>4s} {'mean':>8s} {'sigma':>8s}")
    for key, accs in keyed:
        scenario, model, mode, abl = key
        label = f"{scenario}/{model}/{mode}" + ("" if abl == "NONE" else f"/{abl}")
        mean = float(np.mean(accs))
        std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        print(f"{label:40s} {len(accs):4d} {mean:8.4f} {std:8.4f}")
        plot_lines.append(f"{label}\t{mean:.6f}\t{std:.6f}")
    if plot_path:
        plot_path.write_text("\n".join(plot_lines) + "\n")
        print(f"wrote plot data to {plot_path}")
    return EXIT_OK


# ---------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------

def _add_scenario_flags(p):
    p.add_argument("--scenario", default="custom",
                   choices=["osu-indoor", "osu-outdoor", "ne-wired",
                            "ne-anechoic", "custom"])
    p.add_argument("--k", type=int, help="number of devices")
    p.add_argument("--m", type=int, help="transmissions per device")
    p.add_argument("--p", type=int, help="partitions per transmission")


def _add_train_flags(p):
    p.add_argument("--model", default="cvnn", choices=["rvnn", "cvnn"])
    p.add_argument("--mode", default="iq",
                   choices=["i", "q", "iq", "r", "t", "rt"])
    p.add_argument("--ablate", default="none")
    p.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--precision", default="single", choices=["single", "double"])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--resume", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cvnnfp",
                                 description="Complex-valued CNN RF fingerprinting "
                                             "experiments")
    ap.add_argument("--config", help="JSON config file; flags take precedence")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic recordings")
    _add_scenario_flags(p)
    p.add_argument("--task", default="impairment", choices=["impairment", "crossterm"])
    p.add_argument("--snr", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-dir", required=True)

    p = sub.add_parser("slice", help="construct split manifests")
    _add_scenario_flags(p)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)

    for name in ("run", "sweep"):
        p = sub.add_parser(name, help=f"{name} experiment cell(s)")
        _add_scenario_flags(p)
        _add_train_flags(p)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--data-dir", required=(name == "run"))
        p.add_argument("--manifest-dir", required=(name == "run"))
        p.add_argument("--out", required=(name == "run"), help="results file")
        if name == "sweep":
            p.add_argument("--dry-run", action="store_true")

    p = sub.add_parser("report", help="summarize a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--plot-data", help="write bar-chart data to this file")
    return ap


def _apply_config_file(ap: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Inject config-file values as defaults (flags still win)."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    cfg = json.loads(Path(argv[i + 1]).read_text())
    defaults = {k.replace("-", "_"): v for k, v in cfg.items()}
    for action in ap._subparsers._group_actions[0].choices.values():  # noqa: SLF001
        action.set_defaults(**{k: v for k, v in defaults.items()
                               if any(a.dest == k for a in action._actions)})
    return argv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        argv = _apply_config_file(ap, argv)
        args = ap.parse_args(argv)
        handler = {"synth": cmd_synth, "slice": cmd_slice, "run": cmd_run,
                   "sweep": cmd_sweep, "report": cmd_report}[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError,) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RuntimeError as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
