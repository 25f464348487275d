"""``iotdrift`` command line: synth, train, select, evaluate.

Every flag can also come from a JSON/YAML file given with ``--config`` (keys
are flag names with dashes or underscores) or from an environment variable
``IOTDRIFT_<FLAG>`` such as ``IOTDRIFT_SEED=7`` or ``IOTDRIFT_WINDOW_DAYS=10``.
Precedence: command line, then environment, then config file, then defaults.

Exit codes: 0 success, 2 input or config error, 3 oracle policy on unlabeled
data, 4 internal error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import synthgen
from .distances import METRICS
from .evaluation import ConfigError, ExperimentConfig, run_experiment, write_reports
from .flows import FlowError
from .forest import ForestParams
from .registry import ModelRegistry, RegistryError, class_names_of, train_contextualized, train_global
from .seeding import derive_seed
from .selection import (
    DEFAULT_WINDOW_DAYS,
    MissingLabels,
    SelectionPolicy,
    run_dynamic,
    run_static,
    write_assignments,
)

ENV_PREFIX = "IOTDRIFT_"
EXIT_OK, EXIT_INPUT, EXIT_LABELS, EXIT_INTERNAL = 0, 2, 3, 4
CANDIDATE_ALIASES = {"no-global": "ctx"}

# option -> (type, default)
OPTIONS = {
    "data": (str, None),
    "registry": (str, None),
    "report": (str, None),
    "spec": (str, None),
    "homes": (str, None),
    "policy": (str, "distance"),
    "metric": (str, "ks"),
    "regime": (str, "static"),
    "window_days": (int, DEFAULT_WINDOW_DAYS),
    "candidates": (str, "ctx+global"),
    "runs": (int, 10),
    "n_seen": (int, 5),
    "split_day": (int, 30),
    "seed": (int, 0),
    "trees": (int, 100),
    "max_depth": (int, 20),
    "max_features": (int, 5),
    "folds": (int, 10),
    "jobs": (int, 1),
}
CHOICES = {
    "policy": ("oracle", "distance", "random"),
    "metric": METRICS,
    "regime": ("static", "dynamic"),
    "candidates": ("ctx", "ctx+global", "global", "no-global"),
}
COMMAND_OPTIONS = {
    "synth": ("spec", "data", "seed"),
    "train": ("data", "registry", "homes", "split_day", "seed", "trees", "max_depth", "max_features",
              "folds", "jobs"),
    "select": ("data", "registry", "report", "homes", "policy", "metric", "regime", "window_days",
               "candidates", "split_day", "seed"),
    "evaluate": ("data", "report", "homes", "runs", "n_seen", "split_day", "window_days", "seed", "trees",
                 "max_depth", "max_features", "folds", "jobs"),
}


class UsageError(ValueError):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iotdrift", description="Model selection under concept drift for IoT flow classifiers.")
    sub = p.add_subparsers(dest="command", required=True)
    for cmd, opts in COMMAND_OPTIONS.items():
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", default=None, help="JSON or YAML file mirroring the flags")
        for name in opts:
            typ, default = OPTIONS[name]
            sp.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None,
                            choices=CHOICES.get(name), help=f"default: {default}")
    return p


def _read_config(path: str) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if path.endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a mapping")
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve(command: str, args: argparse.Namespace, environ=os.environ) -> dict:
    """Merge flags, environment, config file and defaults for one command."""
    file_cfg = _read_config(args.config) if args.config else {}
    unknown = set(file_cfg) - set(OPTIONS)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for name in COMMAND_OPTIONS[command]:
        typ, default = OPTIONS[name]
        if command == "synth" and name == "seed":
            default = None  # keep the spec's own seed unless overridden
        value = getattr(args, name)
        if value is None:
            env = environ.get(ENV_PREFIX + name.upper())
            if env is not None:
                value = env
            elif name in file_cfg:
                value = file_cfg[name]
            else:
                value = default
        if value is not None:
            try:
                value = typ(value)
            except (TypeError, ValueError):
                raise UsageError(f"{name}: cannot read {value!r} as {typ.__name__}") from None
            if name in CHOICES and value not in CHOICES[name]:
                raise UsageError(f"{name}: {value!r} not in {CHOICES[name]}")
        out[name] = value
    if "candidates" in out:
        out["candidates"] = CANDIDATE_ALIASES.get(out["candidates"], out["candidates"])
    return out


NOT_FINGERPRINTED = ("data", "registry", "report", "spec", "jobs")


def fingerprint(cfg: dict) -> str:
    """Hash of the settings that affect results; paths and job count are left out."""
    blob = json.dumps({k: v for k, v in cfg.items() if k not in NOT_FINGERPRINTED}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _require(cfg: dict, *names: str) -> None:
    missing = [n for n in names if not cfg.get(n)]
    if missing:
        raise UsageError("missing " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _homes(cfg: dict) -> list[str] | None:
    return cfg["homes"].split(",") if cfg.get("homes") else None


def _params(cfg: dict, seed: int) -> ForestParams:
    return ForestParams(n_trees=cfg["trees"], max_features=cfg["max_features"],
                        max_depth=cfg["max_depth"], seed=seed)


# ---------------------------------------------------------------- commands


def cmd_synth(cfg: dict) -> int:
    _require(cfg, "spec", "data")
    spec = synthgen.load_spec(cfg["spec"])
    if cfg.get("seed") is not None:
        spec = replace(spec, seed=cfg["seed"])
    paths = synthgen.generate(spec, cfg["data"])
    print(f"wrote {len(paths)} flow files to {cfg['data']}")
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    _require(cfg, "data", "registry")
    dataset = synthgen.load_dataset(cfg["data"], _homes(cfg))
    if not dataset:
        raise UsageError(f"no flow files in {cfg['data']}")
    train = {h: t.days(hi=cfg["split_day"]) for h, t in dataset.items()}
    for h, t in train.items():
        if not t.has_labels:
            raise ConfigError(f"{h}: training flows must be labeled (line 1: header has no 'label' column)")
    params = _params(cfg, derive_seed(cfg["seed"], "forest", 0))
    names = class_names_of(train.values())
    models = train_contextualized(train, params, names, cfg["folds"])
    models.append(train_global(train, params, names, cfg["folds"]))
    registry = ModelRegistry.from_models(models)
    registry.save(cfg["registry"], extra={"fingerprint": fingerprint(cfg)})
    for m in models:
        f = m.forest
        nodes = sum(t.n_nodes for t in f.trees)
        print(f"{m.model_id}: {f.params.n_trees} trees, {nodes} nodes, {len(f.class_names)} classes, "
              f"{m.train_scores.n} CV scores")
    return EXIT_OK


def cmd_select(cfg: dict) -> int:
    _require(cfg, "data", "registry", "report")
    registry = ModelRegistry.load(cfg["registry"])
    homes = _homes(cfg)
    dataset = synthgen.load_dataset(cfg["data"], homes)
    if homes is None:
        dataset = {h: t for h, t in dataset.items() if h not in registry.models}
    if not dataset:
        raise UsageError("no unseen homes to select for")
    policy = SelectionPolicy(cfg["policy"], cfg["metric"], cfg["candidates"], cfg["regime"],
                             cfg["window_days"], cfg["seed"])
    split = cfg["split_day"]
    assignments = []
    for home in sorted(dataset):
        table = dataset[home]
        last = int(table.epoch_day.max()) if len(table) else split - 1
        test_days = list(range(split, last + 1))
        if policy.regime == "static":
            assignments.append(run_static(policy, registry, table.days(hi=split), test_days, home))
        else:
            assignments.append(run_dynamic(policy, registry, table, test_days, home))
    out = Path(cfg["report"])
    out.mkdir(parents=True, exist_ok=True)
    write_assignments(out / "assignment.csv", assignments)
    sidecar = {"fingerprint": fingerprint(cfg), "policy": policy.name}
    (out / "assignment.json").write_text(json.dumps(sidecar, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{policy.name}: {sum(len(a.days) for a in assignments)} home-days -> {out / 'assignment.csv'}")
    return EXIT_OK


def cmd_evaluate(cfg: dict) -> int:
    _require(cfg, "data", "report")
    dataset = synthgen.load_dataset(cfg["data"], _homes(cfg))
    config = ExperimentConfig(
        n_seen=cfg["n_seen"], n_runs=cfg["runs"], split_day=cfg["split_day"],
        window_days=cfg["window_days"], seed=cfg["seed"], n_trees=cfg["trees"],
        max_features=cfg["max_features"], max_depth=cfg["max_depth"], n_folds=cfg["folds"],
        n_jobs=cfg["jobs"],
    )
    reports = run_experiment(dataset, config)
    paths = write_reports(reports, cfg["report"], config)
    print((Path(cfg["report"]) / "summary.txt").read_text(encoding="utf-8"))
    print(f"wrote {len(paths)} files to {cfg['report']}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "select": cmd_select, "evaluate": cmd_evaluate}


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    start = time.perf_counter()
    try:
        cfg = resolve(args.command, args)
        code = COMMANDS[args.command](cfg)
    except MissingLabels as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LABELS
    except (UsageError, ConfigError, FlowError, RegistryError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    print(f"{args.command} done in {time.perf_counter() - start:.1f}s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
