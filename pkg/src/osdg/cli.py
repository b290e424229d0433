"""Command-line surface: synth | train | calibrate | eval | ablate | report.

Every command validates its config and paths before any computation starts.
Exit codes: 0 success, 1 validation or usage problems, 2 runtime failures.
The OSDG_RUN_DIR environment variable supplies the default output root when
--out / --run is omitted.
"""

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional

from . import pipeline, plots
from .dataio import default_scene_spec, load_cube, save_cube, synth_scene
from .pipeline import RunConfig, load_config

RUN_DIR_ENV = "OSDG_RUN_DIR"


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="osdg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="synthesize a paired source/target scene")
    p.add_argument("--config", required=True, help="scene spec JSON")
    p.add_argument("--out", help=f"output directory (default ${RUN_DIR_ENV})")
    p.add_argument("--seed", type=int, help="override the scene seed")

    p = sub.add_parser("train", help="train a model on a source cube")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--data", required=True, help="source .hsic cube")
    p.add_argument("--out", help=f"run directory (default ${RUN_DIR_ENV})")
    p.add_argument("--seed", type=int, help="training seed (default: first config seed)")

    p = sub.add_parser("calibrate", help="calibrate the rejection threshold")
    p.add_argument("--config", required=True)
    p.add_argument("--run", help=f"run directory with model.npz (default ${RUN_DIR_ENV})")
    p.add_argument("--data", required=True, help="source .hsic cube")

    p = sub.add_parser("eval", help="evaluate on a target cube")
    p.add_argument("--config", required=True)
    p.add_argument("--run", help=f"run directory with model + calibration (default ${RUN_DIR_ENV})")
    p.add_argument("--target", required=True, help="target .hsic cube")

    p = sub.add_parser("ablate", help="run variant comparisons")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="source .hsic cube")
    p.add_argument("--target", required=True, help="target .hsic cube")
    p.add_argument("--out", help=f"output directory (default ${RUN_DIR_ENV})")
    p.add_argument("--variants", required=True, help="comma-separated variant names")
    p.add_argument("--seed", type=int, help="use this single seed instead of the config list")

    p = sub.add_parser("report", help="emit uncertainty tables and plots")
    p.add_argument("--config", required=True)
    p.add_argument("--run", help=f"run directory with model + calibration (default ${RUN_DIR_ENV})")
    p.add_argument("--target", required=True, help="target .hsic cube")
    return parser


# ---------------------------------------------------------------------------
# shared plumbing


def _resolve_dir(value: Optional[str], flag: str) -> str:
    out = value or os.environ.get(RUN_DIR_ENV)
    if not out:
        raise ValueError(f"no output directory: pass {flag} or set {RUN_DIR_ENV}")
    return out


def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise ValueError(f"{what} not found: {path}")
    return path


def _merge_manifest(run_dir: str, config_hash: str, new_artifacts: Dict[str, str]) -> None:
    path = os.path.join(run_dir, "manifest.json")
    artifacts = dict(new_artifacts)
    if os.path.isfile(path):
        with open(path, "r", encoding="utf-8") as f:
            previous = json.load(f)
        merged = dict(previous.get("artifacts", {}))
        merged.update(artifacts)
        artifacts = merged
    pipeline.write_manifest(run_dir, config_hash, artifacts)


def _check_run_hash(run_dir: str, cfg: RunConfig) -> None:
    path = os.path.join(run_dir, "manifest.json")
    if not os.path.isfile(path):
        return
    with open(path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("config_hash") not in (None, cfg.config_hash()):
        raise ValueError(
            f"run directory {run_dir} was produced by config {manifest['config_hash']}, "
            f"current config hashes to {cfg.config_hash()}"
        )


def _load_run_model(cfg: RunConfig, run_dir: str) -> pipeline.TrainedModel:
    return pipeline.load_model(cfg, _require_file(os.path.join(run_dir, "model.npz"), "model.npz"))


def _calibrated_pieces(cfg: RunConfig, run_dir: str):
    summary = pipeline.read_calibration_summary(
        _require_file(os.path.join(run_dir, "calibration.csv"), "calibration.csv (run `osdg calibrate` first)")
    )
    estimator = cfg.estimator
    if estimator.kind == "temp_scaling" and "temperature" in summary:
        estimator = replace(estimator, temperature=summary["temperature"])
    return summary["tau_star"], estimator


# ---------------------------------------------------------------------------
# command validation (before any computation) and execution


def _validate_synth(args) -> Dict:
    with open(_require_file(args.config, "scene config"), "r", encoding="utf-8") as f:
        raw = f.read()
    fields = json.loads(raw)
    if not isinstance(fields, dict):
        raise ValueError("scene config must be a JSON object")
    if args.seed is not None:
        fields["seed"] = args.seed
    spec = default_scene_spec(**fields)
    return {"spec": spec, "out": _resolve_dir(args.out, "--out"), "blob": json.dumps(fields, sort_keys=True)}


def _run_synth(job) -> None:
    os.makedirs(job["out"], exist_ok=True)
    source, target = synth_scene(job["spec"])
    save_cube(source, os.path.join(job["out"], "source.hsic"))
    save_cube(target, os.path.join(job["out"], "target.hsic"))
    scene_hash = hashlib.sha256(job["blob"].encode()).hexdigest()[:16]
    pipeline.write_manifest(job["out"], scene_hash, {"source": "source.hsic", "target": "target.hsic"})
    print(f"wrote source.hsic and target.hsic to {job['out']}")


def _validate_train(args) -> Dict:
    cfg = load_config(_require_file(args.config, "run config"))
    source = load_cube(_require_file(args.data, "source cube"))
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    return {"cfg": cfg, "source": source, "seed": int(seed), "out": _resolve_dir(args.out, "--out")}


def _run_train(job) -> None:
    cfg, out = job["cfg"], job["out"]
    os.makedirs(out, exist_ok=True)
    model = pipeline.train(cfg, job["source"], job["seed"])
    pipeline.save_model(model, os.path.join(out, "model.npz"))
    with open(os.path.join(out, "history.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write(model.history.to_csv())
    with open(os.path.join(out, "config.json"), "w", encoding="utf-8", newline="\n") as f:
        f.write(cfg.to_json())
    _merge_manifest(out, cfg.config_hash(), {"model": "model.npz", "history": "history.csv", "config": "config.json"})
    best = model.history.val_accuracy[model.history.best_epoch]
    print(f"trained {cfg.epochs} epochs (seed {job['seed']}); best validation accuracy {best:.3f}")


def _validate_calibrate(args) -> Dict:
    cfg = load_config(_require_file(args.config, "run config"))
    run_dir = _resolve_dir(args.run, "--run")
    _check_run_hash(run_dir, cfg)
    _require_file(os.path.join(run_dir, "model.npz"), "model.npz (run `osdg train` first)")
    source = load_cube(_require_file(args.data, "source cube"))
    return {"cfg": cfg, "run": run_dir, "source": source}


def _run_calibrate(job) -> None:
    cfg, run_dir = job["cfg"], job["run"]
    model = _load_run_model(cfg, run_dir)
    result, estimator = pipeline.calibrate(model, job["source"], cfg)
    temp = estimator.temperature if estimator.kind == "temp_scaling" else None
    with open(os.path.join(run_dir, "calibration.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write(pipeline._calibration_csv(result, temp))
    _merge_manifest(run_dir, cfg.config_hash(), {"calibration": "calibration.csv"})
    print(f"tau* = {result.tau_star:.4f} at synthetic-unknown TPR {result.achieved_tpr:.3f}")


def _validate_eval(args) -> Dict:
    cfg = load_config(_require_file(args.config, "run config"))
    run_dir = _resolve_dir(args.run, "--run")
    _check_run_hash(run_dir, cfg)
    _require_file(os.path.join(run_dir, "model.npz"), "model.npz (run `osdg train` first)")
    tau, estimator = _calibrated_pieces(cfg, run_dir)
    target = load_cube(_require_file(args.target, "target cube"))
    return {"cfg": cfg, "run": run_dir, "target": target, "tau": tau, "estimator": estimator}


def _run_eval(job) -> None:
    cfg, run_dir = job["cfg"], job["run"]
    model = _load_run_model(cfg, run_dir)
    map_path = os.path.join(run_dir, "classification_map.bmp")
    report = pipeline.evaluate(model, job["target"], cfg, job["tau"], job["estimator"], map_path=map_path)
    with open(os.path.join(run_dir, "metrics.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write(report.to_csv())
    _merge_manifest(run_dir, cfg.config_hash(), {"metrics": "metrics.csv", "classification_map": "classification_map.bmp"})
    print(report.format_table())


def _validate_ablate(args) -> Dict:
    cfg = load_config(_require_file(args.config, "run config"))
    if args.seed is not None:
        cfg = replace(cfg, seeds=(int(args.seed),))
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not variants:
        raise ValueError("no variants given")
    space = pipeline.variant_space()
    bad = [v for v in variants if v not in space]
    if bad:
        raise ValueError(f"unknown variants {bad}; valid names: {', '.join(sorted(space))}")
    source = load_cube(_require_file(args.data, "source cube"))
    target = load_cube(_require_file(args.target, "target cube"))
    return {"cfg": cfg, "variants": variants, "source": source, "target": target,
            "out": _resolve_dir(args.out, "--out")}


def _run_ablate(job) -> None:
    cfg, out = job["cfg"], job["out"]
    os.makedirs(out, exist_ok=True)
    rows = pipeline.ablate(cfg, job["variants"], job["source"], job["target"])
    with open(os.path.join(out, "ablation.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write(pipeline.ablation_table(rows))
    _merge_manifest(out, cfg.config_hash(), {"ablation": "ablation.csv"})
    for row in rows:
        print(f"{row['variant']:>16} seed {row['seed']}: OS {row['os']:.2f}  Unk {row['unk']:.2f}  HOS {row['hos']:.2f}")


def _validate_report(args) -> Dict:
    cfg = load_config(_require_file(args.config, "run config"))
    run_dir = _resolve_dir(args.run, "--run")
    _check_run_hash(run_dir, cfg)
    _require_file(os.path.join(run_dir, "model.npz"), "model.npz (run `osdg train` first)")
    tau, estimator = _calibrated_pieces(cfg, run_dir)
    target = load_cube(_require_file(args.target, "target cube"))
    return {"cfg": cfg, "run": run_dir, "target": target, "tau": tau, "estimator": estimator}


def _run_report(job) -> None:
    cfg, run_dir = job["cfg"], job["run"]
    model = _load_run_model(cfg, run_dir)
    tables = pipeline.uncertainty_report(model, job["target"], cfg, job["tau"], run_dir, job["estimator"])
    svgs = plots.render_report_plots(tables, run_dir)
    artifacts = {name: os.path.basename(path) for name, path in tables.items()}
    artifacts.update({name: os.path.basename(path) for name, path in svgs.items()})
    _merge_manifest(run_dir, cfg.config_hash(), artifacts)
    print(f"wrote {len(tables)} tables and {len(svgs)} plots to {run_dir}")


_COMMANDS = {
    "synth": (_validate_synth, _run_synth),
    "train": (_validate_train, _run_train),
    "calibrate": (_validate_calibrate, _run_calibrate),
    "eval": (_validate_eval, _run_eval),
    "ablate": (_validate_ablate, _run_ablate),
    "report": (_validate_report, _run_report),
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    validate, run = _COMMANDS[args.command]
    try:
        job = validate(args)
    except (ValueError, OSError, json.JSONDecodeError, TypeError) as e:
        print(f"osdg {args.command}: {e}", file=sys.stderr)
        return 1
    try:
        run(job)
    except Exception as e:
        print(f"osdg {args.command} failed: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
