"""Command-line entry point.

Four verbs cover the full workflow:

* ``expert``      simulate the ground-truth oracle and freeze expert.json
* ``train``       run one replication per seed, writing runs/<study>/<seed>/
* ``evaluate``    turn completed runs into the diagnostic CSV files
* ``sensitivity`` one-at-a-time hyperparameter sweeps to sensitivity.csv

Studies M1-M4 ship as presets (``--preset``/``--study``); ``--config``
loads a full configuration from TOML or JSON instead. Every verb drops a
``manifest.json`` entry recording the configuration hash, seeds, and code
version, so a rerun from the same manifest reproduces its outputs
byte for byte.
"""

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .diagnostics import (
    SLOPE_WINDOW,
    SlopeReport,
    average_prior_sample,
    averaging_weights,
    comparison_table,
    loss_slope,
    sensitivity_analysis,
    write_comparison_csv,
    write_sensitivity_csv,
    write_slopes_csv,
    write_weights_csv,
)
from .flow import load_flow
from .oracle import ExpertData, TruePrior, simulate_expert
from .studies import STUDY_IDS, StudyConfig, reduced_study, study_preset
from .trainer import EVAL_SAMPLE_COUNT, TrainingTrajectory, run_replications

__all__ = ["main", "parse_seed_spec", "load_study_config", "config_sha256"]


def parse_seed_spec(text):
    """Seed lists come as a single value ("7"), a comma list ("1,2,5"), or
    an inclusive range ("1..30")."""
    text = text.strip()
    if ".." in text:
        lo_text, hi_text = text.split("..", 1)
        lo, hi = int(lo_text), int(hi_text)
        if hi < lo:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    seeds = [int(part) for part in text.split(",") if part.strip()]
    if not seeds:
        raise ValueError(f"no seeds in {text!r}")
    return seeds


def load_study_config(args):
    """Resolve --preset/--config/--reduced/--out/--seeds into a StudyConfig."""
    if args.config is not None and args.preset is not None:
        raise ValueError("pass either --preset or --config, not both")
    if args.config is not None:
        if args.reduced:
            raise ValueError("--reduced only applies to presets; edit the config file")
        path = Path(args.config)
        if path.suffix == ".toml":
            with open(path, "rb") as fh:
                payload = tomllib.load(fh)
        elif path.suffix == ".json":
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        else:
            raise ValueError(f"config must be .toml or .json, got {path.name!r}")
        study = StudyConfig.from_dict(payload)
    elif args.preset is not None:
        study = reduced_study(args.preset) if args.reduced else study_preset(args.preset)
    else:
        raise ValueError("one of --preset or --config is required")
    if getattr(args, "out", None):
        study.out_dir = str(args.out)
    seeds = getattr(args, "seeds", None)
    if seeds:
        study.seeds = tuple(parse_seed_spec(seeds))
    elif getattr(args, "seed", None) is not None and args.command == "train":
        study.seeds = (int(args.seed),)
    return study


def config_sha256(study):
    canonical = json.dumps(study.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def update_manifest(study_dir, command, payload):
    path = Path(study_dir) / "manifest.json"
    data = {}
    if path.exists():
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            data = {}
    data[command] = payload
    path.write_text(
        json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def _study_manifest(study, **extra):
    return {
        "code_version": __version__,
        "config": study.to_dict(),
        "config_sha256": config_sha256(study),
        **extra,
    }


def cmd_expert(args):
    study = load_study_config(args)
    count = args.count if args.count is not None else study.expert_count
    seed = args.seed if args.seed is not None else 0
    study_dir = Path(study.out_dir) / study.study_id
    study_dir.mkdir(parents=True, exist_ok=True)
    expert = simulate_expert(
        study.true_prior, study.model, study.plan, count, np.random.default_rng(seed)
    )
    path = study_dir / "expert.json"
    expert.save(path)
    update_manifest(
        study_dir, "expert", _study_manifest(study, seed=seed, sample_count=count)
    )
    print(f"wrote {path} ({len(expert.statistics)} statistics, {count} draws)")
    return 0


def cmd_train(args):
    study = load_study_config(args)
    study_dir = Path(study.out_dir) / study.study_id
    expert_path = Path(args.expert) if args.expert else study_dir / "expert.json"
    if not expert_path.exists():
        raise ValueError(
            f"no expert data at {expert_path}; run `elicitflow expert` first"
        )
    expert = ExpertData.load(expert_path)
    results, failures = run_replications(study, expert, out_dir=study.out_dir)
    update_manifest(
        study_dir,
        "train",
        _study_manifest(study, seeds=list(study.seeds), failures=failures),
    )
    for result in results:
        print(
            f"seed {result.seed}: final loss {result.final_loss:.6f} -> "
            f"{study_dir / str(result.seed)}"
        )
    for failure in failures:
        print(
            f"seed {failure['seed']}: diverged at epoch {failure['epoch']}",
            file=sys.stderr,
        )
    return 2 if failures else 0


def _load_completed_runs(runs_dir, expert):
    """Collect usable seed directories; anything unreadable is skipped by
    name so evaluation proceeds on the rest."""
    records, skipped = [], []
    seed_dirs = [d for d in runs_dir.iterdir() if d.is_dir() and d.name.isdigit()]
    for child in sorted(seed_dirs, key=lambda d: int(d.name)):
        try:
            payload = json.loads((child / "result.json").read_text(encoding="utf-8"))
            stats = payload["statistics"]
            for name in expert.statistics:
                if name not in stats:
                    raise ValueError(f"result lacks statistic {name!r}")
            trajectory = TrainingTrajectory.read_csv(child / "trajectory.csv")
            checkpoint = child / "checkpoint.bin"
            if not checkpoint.exists():
                raise ValueError("checkpoint.bin missing")
            records.append(
                SimpleNamespace(
                    seed=int(payload["seed"]),
                    final_loss=float(payload["final_loss"]),
                    final_statistics=stats,
                    trajectory=trajectory,
                    checkpoint=checkpoint,
                )
            )
        except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
            skipped.append({"run": child.name, "error": str(exc)})
            print(f"warning: skipping run {child.name}: {exc}", file=sys.stderr)
    return records, skipped


def _write_marginal_samples(runs_dir, records, weights, expert, count, seed):
    """Emit the density-overlay inputs: long-format per-seed and ground-truth
    draws (marginals.csv) plus wide-format mixture draws
    (averaged_prior_samples.csv)."""
    param_names = records[0].trajectory.param_names
    rng = np.random.default_rng(seed)
    flows = [load_flow(r.checkpoint) for r in records]
    with open(runs_dir / "marginals.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source", "param", "value"])
        for record, flow in zip(records, flows):
            draws = flow.frozen().sample(count, rng).data
            for j, pname in enumerate(param_names):
                # float() strips the numpy scalar wrapper so repr stays plain
                writer.writerows(
                    [f"seed:{record.seed}", pname, repr(float(v))]
                    for v in draws[:, j]
                )
        oracle_spec = expert.provenance.get("oracle")
        if oracle_spec is not None:
            truth = TruePrior.from_dict(oracle_spec).sample(count, rng)
            for j, pname in enumerate(param_names):
                writer.writerows(
                    ["truth", pname, repr(float(v))] for v in truth[:, j]
                )
    averaged = average_prior_sample(flows, weights.weights, count, rng).data
    with open(
        runs_dir / "averaged_prior_samples.csv", "w", encoding="utf-8", newline=""
    ) as fh:
        writer = csv.writer(fh)
        writer.writerow(param_names)
        writer.writerows([repr(float(v)) for v in row] for row in averaged)


def cmd_evaluate(args):
    runs_dir = Path(args.runs)
    expert_path = runs_dir / "expert.json"
    if not expert_path.exists():
        raise ValueError(f"no expert data at {expert_path}")
    expert = ExpertData.load(expert_path)
    records, skipped = _load_completed_runs(runs_dir, expert)
    if not records:
        raise ValueError(f"no completed runs under {runs_dir}")

    shortest = min(len(r.trajectory.totals) for r in records)
    window = min(SLOPE_WINDOW, shortest)
    if window < 2:
        raise ValueError("trajectories too short for a slope estimate")
    report = SlopeReport(
        [r.seed for r in records],
        [loss_slope(r.trajectory.totals, window) for r in records],
    )
    write_slopes_csv(runs_dir / "slopes.csv", report)

    weights = averaging_weights(
        [r.final_loss for r in records],
        gamma=args.gamma,
        seeds=[r.seed for r in records],
    )
    write_weights_csv(runs_dir / "weights.csv", weights)

    write_comparison_csv(
        runs_dir / "comparison.csv", comparison_table(records, expert)
    )
    _write_marginal_samples(
        runs_dir, records, weights, expert, args.samples, args.seed
    )
    update_manifest(
        runs_dir,
        "evaluate",
        {
            "code_version": __version__,
            "gamma": args.gamma,
            "runs": [r.seed for r in records],
            "sample_count": args.samples,
            "seed": args.seed,
            "skipped": skipped,
            "slope_window": window,
        },
    )
    print(
        f"evaluated {len(records)} runs -> slopes.csv weights.csv comparison.csv "
        "marginals.csv averaged_prior_samples.csv"
    )
    return 0


def cmd_sensitivity(args):
    study = load_study_config(args)
    study_dir = Path(study.out_dir) / study.study_id
    study_dir.mkdir(parents=True, exist_ok=True)
    rows = sensitivity_analysis(
        study.true_prior,
        study.model,
        study.plan,
        count=args.count,
        seed=args.seed if args.seed is not None else 0,
    )
    path = study_dir / "sensitivity.csv"
    write_sensitivity_csv(path, rows)
    update_manifest(
        study_dir,
        "sensitivity",
        _study_manifest(
            study, seed=args.seed or 0, sample_count=args.count, rows=len(rows)
        ),
    )
    print(f"wrote {path} ({len(rows)} rows)")
    return 0


def _add_config_flags(parser):
    parser.add_argument(
        "--preset", "--study", dest="preset", choices=STUDY_IDS,
        help="bundled study configuration",
    )
    parser.add_argument("--config", help="full study config as .toml or .json")
    parser.add_argument(
        "--reduced", action="store_true",
        help="desk-scale preset variant (smaller flow, fewer epochs)",
    )
    parser.add_argument("--out", help="output root (default: config's out_dir)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="elicitflow",
        description="Learn joint priors from expert-elicited statistics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("expert", help="simulate the oracle and freeze expert.json")
    _add_config_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, help="oracle draws (default: config value)")
    p.set_defaults(func=cmd_expert)

    p = sub.add_parser("train", help="run one replication per seed")
    _add_config_flags(p)
    p.add_argument("--seed", type=int, help="single replication seed")
    p.add_argument("--seeds", help='seed list: "3", "1,2,5", or "1..30"')
    p.add_argument("--expert", help="expert.json path (default: <out>/<study>/)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="diagnostics over completed runs")
    p.add_argument("--runs", required=True, help="directory holding <seed>/ runs")
    p.add_argument("--gamma", type=float, default=1.0, help="averaging sharpness")
    p.add_argument(
        "--samples", type=int, default=EVAL_SAMPLE_COUNT,
        help="draws per density overlay",
    )
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sensitivity", help="one-at-a-time hyperparameter sweeps")
    _add_config_flags(p)
    p.add_argument("--count", type=int, default=2000, help="draws per grid point")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sensitivity)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
