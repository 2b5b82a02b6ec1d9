"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import evaluate, harness, mixing, scm, train

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2

REPRODUCE = {
    "reproduce-nintervention": "nintervention",
    "reproduce-multiview": "multiview",
    "reproduce-vrex": "vrex",
}


def _load_config(args, scenario=None) -> harness.ExperimentConfig:
    doc = {}
    if args.config:
        with open(args.config) as fh:
            doc = yaml.safe_load(fh) or {}
        if not isinstance(doc, dict):
            raise harness.ConfigError("config document must be a mapping")
    if scenario is not None:
        if doc.get("scenario", scenario) != scenario:
            raise harness.ConfigError(f"config scenario {doc['scenario']!r} does not match {scenario!r}")
        doc["scenario"] = scenario
    doc = harness.apply_overrides(doc, args.set or [])
    if args.seeds:
        doc["seeds"] = [int(s) for s in args.seeds.split(",")]
    if args.outdir:
        doc["outdir"] = args.outdir
    return harness.ExperimentConfig.from_dict(doc)


def _print(obj):
    print(json.dumps(harness._jsonable(obj), indent=2, sort_keys=True))


def cmd_run(args, scenario=None):
    cfg = _load_config(args, scenario)
    if args.dry_run:
        _print(harness.plan(cfg))
        return EXIT_OK
    if cfg.scenario == "oracle":
        return _write_oracle(cfg, args)
    record = harness.run(cfg)
    root = harness.write_record(record, cfg)
    _print({"output_dir": str(root), "config_hash": record.config_hash, "summary": record.summary})
    return EXIT_OK


def _write_oracle(cfg, args):
    rows = harness.run_oracle(cfg)
    out = getattr(args, "out", None)
    if out:
        out = Path(out)
        if out.suffix == ".csv":
            harness.write_csv(rows, out)
        else:
            harness.dump_json(rows, out)
    _print(rows)
    return EXIT_OK if all(r["agrees"] for r in rows) else EXIT_INVALID


def cmd_oracle(args):
    cfg = _load_config(args, "oracle")
    if args.dry_run:
        _print(harness.plan(cfg))
        return EXIT_OK
    return _write_oracle(cfg, args)


def cmd_simulate(args):
    """Write latents and observations per environment (or view) as CSV."""
    cfg = _load_config(args)
    root = harness.run_dir(cfg)
    if args.dry_run:
        _print({**harness.plan(cfg), "writes": [str(root / str(s) / "data") for s in cfg.seeds]})
        return EXIT_OK
    for seed in cfg.seeds:
        out = root / str(seed) / "data"
        out.mkdir(parents=True, exist_ok=True)
        if cfg.scenario in ("nintervention", "variant_demo"):
            envs = (harness.nintervention_envs(cfg, seed)[0] if cfg.scenario == "nintervention"
                    else harness.variant_envs(cfg, seed)[0])
            net, zs, xs = harness.mixed_environments(envs, cfg.n_samples, seed, cfg)
            for env, z, x in zip(envs, zs, xs):
                scm.LatentBatch(z, env.env_id).to_csv(out / f"latents_env{env.env_id}.csv")
                mixing.observations_to_csv(x, out / f"observations_env{env.env_id}.csv")
            harness.dump_json({"mixing": net.to_dict(),
                               "environments": [e.spec.to_dict() for e in envs]}, out / "generator.json")
        elif cfg.scenario == "multiview":
            z, views = harness.multiview_data(cfg, seed)
            scm.LatentBatch(z, 0).to_csv(out / "latents.csv")
            for k, v in enumerate(views):
                mixing.observations_to_csv(v, out / f"observations_view{k}.csv")
        elif cfg.scenario == "vrex":
            _, data = harness.vrex_data(cfg, seed)
            for k, (z, x, y) in enumerate(data):
                scm.LatentBatch(z, k).to_csv(out / f"latents_env{k}.csv")
                mixing.observations_to_csv(x, out / f"observations_env{k}.csv")
                np.savetxt(out / f"labels_env{k}.csv", y, delimiter=",", header="y", comments="")
        else:
            raise harness.ConfigError("oracle scenario has no data to simulate")
    _print({"output_dir": str(root), "seeds": cfg.seeds})
    return EXIT_OK


def _read_matrix(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    keep = [i for i, h in enumerate(header) if h != "env_id"]
    return data[:, keep]


def cmd_eval(args):
    z_hat = _read_matrix(args.encodings)
    z = _read_matrix(args.latents)
    block = [int(b) - 1 for b in args.block.split(",")] if args.block else None
    report = evaluate.identifiability_report(z_hat, z, block=block, seed=args.seed,
                                             metadata={"encodings": str(args.encodings)})
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def _collect_reports(paths):
    found = []
    for p in map(Path, paths):
        if p.is_dir():
            found += sorted(p.rglob("report.json"))
        elif p.exists():
            found.append(p)
        else:
            raise FileNotFoundError(p)
    return found


def cmd_aggregate(args):
    files = _collect_reports(args.paths)
    dicts = [json.loads(f.read_text()) for f in files]
    summary = harness.aggregate(dicts)
    if args.out:
        out = Path(args.out)
        if out.suffix == ".csv":
            harness.write_csv([{"metric": k, **v} for k, v in summary.items()], out)
        else:
            harness.dump_json(summary, out)
    _print(summary)
    return EXIT_OK


def _config_args(p, need_config=False):
    p.add_argument("--config", required=need_config, help="YAML experiment config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field, e.g. train.n_epochs=50 (repeatable)")
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--outdir", help=f"output root (default ${harness.OUT_ENV} or ./runs)")
    p.add_argument("--dry-run", action="store_true", help="validate and print the resolved plan only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="invariant-crl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample latents and mixed observations to CSV")
    _config_args(p, need_config=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train and evaluate the configured scenario")
    _config_args(p, need_config=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="identifiability report for an encoding CSV")
    p.add_argument("--encodings", required=True)
    p.add_argument("--latents", required=True)
    p.add_argument("--block", help="1-based encoding columns forming the evaluated block")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", help="analytic invariant partitions and their verification")
    _config_args(p)
    p.add_argument("--out", help="write the table as .json or .csv")
    p.set_defaults(func=cmd_oracle)

    for name, scenario in REPRODUCE.items():
        p = sub.add_parser(name, help=f"run the {scenario} experiment (defaults if no config)")
        _config_args(p)
        p.set_defaults(func=lambda a, s=scenario: cmd_run(a, s))

    p = sub.add_parser("aggregate", help="summarise report.json files or run directories")
    p.add_argument("paths", nargs="+")
    p.add_argument("--out", help="write the summary as .json or .csv")
    p.set_defaults(func=cmd_aggregate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except train.TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, KeyError, TypeError, OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
