"""Command-line entry point: ``pitwi generate|run|ood|inspect|validate``.

Exit codes: 0 success, 1 configuration error, 2 run failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .envs import crafter as crafter_env
from .envs import cube as cube_env
from .envs import lake as lake_env
from .harness import ConfigError, ExperimentConfig

log = logging.getLogger("pitwi")

EXIT_OK, EXIT_CONFIG, EXIT_RUN = 0, 1, 2


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config(path, overrides=(), domain=None) -> ExperimentConfig:
    """Config file (optional) plus ``key=value`` overrides; values parse as JSON when they can."""
    obj: dict = {}
    if path:
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(obj, dict):
            raise ConfigError("config file must hold a JSON object")
    if domain:
        obj["domain"] = domain
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not key=value")
        obj[key] = _parse_value(raw)
    if "domain" not in obj:
        raise ConfigError("config needs a domain (file field or --domain)")
    return ExperimentConfig.from_json(obj)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def cmd_generate(args) -> int:
    out = Path(args.out)
    if args.domain == "cube":
        ds = cube_env.scramble_dataset(args.seed, args.count, args.moves)
        _write_json(out / "cube_dataset.json", ds.manifest())
        print(f"wrote {args.count} cube states to {out / 'cube_dataset.json'}")
        return EXIT_OK
    for i in range(args.count):
        if args.domain == "lake":
            obj = lake_env.instance_for_episode(args.seed, i, args.size or 16).to_json()
        else:
            obj = crafter_env.world_for_episode(args.seed, i, args.size or crafter_env.DEFAULT_SIZE).to_json()
        _write_json(out / f"{args.domain}_{args.seed}_{i:04d}.json", obj)
    print(f"wrote {args.count} {args.domain} maps to {out}")
    return EXIT_OK


def _summary(report: dict) -> str:
    a = report["aggregates"]
    return (f"{report['domain']}/{report['mode']}: episodes={a['episodes']:.0f} "
            f"grounding={a['grounding_accuracy']:.4f} planning={a['planning_accuracy']:.4f} "
            f"reveals={a['reveal_count']:.2f} perception_tokens={a['perception_tokens']:.1f} "
            f"total_tokens={a['total_tokens']:.1f}")


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set, args.domain)
    report = harness.run_experiment(cfg, args.out)
    print(_summary(report))
    return EXIT_OK


def cmd_ood(args) -> int:
    cfg = load_config(args.config, args.set, args.domain)
    report = harness.run_ood(cfg, args.library, args.out)
    print(_summary(report))
    return EXIT_OK


def _load_report(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report {path}: {exc}") from None


def cmd_inspect(args) -> int:
    report = _load_report(args.report)
    print(_summary(report))
    for run in report["runs"]:
        a = run["aggregates"]
        print(f"  seed {run['seed']} trial {run['trial']}: grounding={a['grounding_accuracy']:.4f} "
              f"planning={a['planning_accuracy']:.4f} reveals={a['reveal_count']:.2f} "
              f"proposals={len(run['proposals'])}")
    if args.episodes:
        for run in report["runs"]:
            for e in run["episodes"]:
                status = "ok" if e["success"] else f"FAIL ({e['failure']})"
                print(f"    [{run['seed']}/{run['trial']}] ep {e['episode']:3d} {e['instance']}: "
                      f"reveals={e['reveal_count']} imputed={e['imputation_count']} "
                      f"grounding={e['grounding_accuracy']:.3f} {status}")
    return EXIT_OK


def cmd_validate(args) -> int:
    report = _load_report(args.report)
    root = Path(args.report).parent
    problems = harness.audit_report(report, root)
    for p in problems:
        print(p)
    print("valid" if not problems else f"{len(problems)} problem(s)")
    return EXIT_OK if not problems else EXIT_RUN


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pitwi", description="Pattern-induced world model construction experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write generated maps or the cube dataset")
    g.add_argument("domain", choices=harness.DOMAINS)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, default=10)
    g.add_argument("--size", type=int)
    g.add_argument("--moves", type=int, default=20, help="scramble length (cube)")
    g.add_argument("--out", default="generated")
    g.set_defaults(func=cmd_generate)

    for name, func, helptext in (("run", cmd_run, "run an experiment"),
                                 ("ood", cmd_ood, "run with a frozen library on larger maps")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("--config", help="JSON config file")
        r.add_argument("--domain", choices=harness.DOMAINS)
        r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field (value parsed as JSON when possible)")
        r.add_argument("--out", help="run directory")
        if name == "ood":
            r.add_argument("--library", help="frozen library JSON")
        r.set_defaults(func=func)

    i = sub.add_parser("inspect", help="pretty-print a report")
    i.add_argument("report")
    i.add_argument("--episodes", action="store_true", help="list every episode")
    i.set_defaults(func=cmd_inspect)

    v = sub.add_parser("validate", help="schema and invariant audit of a report")
    v.add_argument("report")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a run failure
        log.debug("run failed", exc_info=True)
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
