"""Experiment protocol: seen/unseen partitions, strategies, daily metrics, reports.

A run draws ``n_seen`` seen homes, trains one contextualized model per seen
home and a GLOBAL model on days before ``split_day``, then evaluates every
strategy on each unseen home's test days (``epoch_day >= split_day``).

Static strategies select once on the unseen home's training-period flows.
Dynamic strategies re-select daily from the trailing window of that home's
whole stream. The ideal of a regime is the oracle over GLOBAL and the
contextualized models in that regime; ratios of the distance and random
strategies are taken against it, for accuracy and for F1.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .distances import METRICS
from .flows import FlowTable
from .forest import ForestParams
from .metrics import NoAccepted, compare_days, macro_accuracy, ratio_to_ideal, set_f1
from .registry import DEFAULT_FOLDS, ModelRegistry, class_names_of, train_contextualized, train_global
from .seeding import derive_seed, rng_for
from .selection import (
    DEFAULT_WINDOW_DAYS,
    Assignment,
    ScoredStream,
    SelectionPolicy,
    assign_dynamic,
    assign_static,
    score_stream,
)

__all__ = [
    "ConfigError", "EpochResult", "StrategyResult", "RunReport", "ExperimentConfig",
    "default_strategies", "evaluate_assignment", "run_experiment", "write_reports",
    "macro_accuracy", "set_f1", "ratio_to_ideal", "compare_days", "NoAccepted",
]

RATIO_KEYS = METRICS + ("rnd",)


class ConfigError(ValueError):
    pass


@dataclass
class EpochResult:
    """Outcome of one model on one home-day."""

    home_id: str
    epoch_day: int
    model_id: str
    predicted: np.ndarray
    true: np.ndarray
    accepted: np.ndarray
    class_names: tuple[str, ...]
    true_names: np.ndarray

    @property
    def n_flows(self) -> int:
        return len(self.true)

    @property
    def n_accepted(self) -> int:
        return int(self.accepted.sum())

    @property
    def predicted_set(self) -> set[str]:
        return {self.class_names[c] for c in np.unique(self.predicted[self.accepted])}

    @property
    def true_set(self) -> set[str]:
        return set(self.true_names.tolist())

    @property
    def accuracy(self) -> float | None:
        """Macro accuracy over accepted flows, ``None`` if nothing was accepted."""
        try:
            return macro_accuracy(self.predicted, self.true, self.accepted)
        except NoAccepted:
            return None

    @property
    def f1(self) -> tuple[float, float, float]:
        return set_f1(self.predicted_set, self.true_set)


@dataclass
class StrategyResult:
    """Daily metrics of one strategy; ``daily_*[home][day]``."""

    name: str
    assignments: list[Assignment]
    daily_accuracy: dict[str, dict[int, float]] = field(default_factory=dict)
    daily_f1: dict[str, dict[int, float]] = field(default_factory=dict)
    rows: list[dict] = field(default_factory=list)

    def home_accuracy(self) -> dict[str, float]:
        return {h: float(np.mean(list(d.values()))) for h, d in self.daily_accuracy.items() if d}

    def home_f1(self) -> dict[str, float]:
        return {h: float(np.mean(list(d.values()))) for h, d in self.daily_f1.items() if d}

    @property
    def accuracy(self) -> float:
        """Mean over unseen homes of each home's mean daily accuracy."""
        per_home = self.home_accuracy()
        return float(np.mean(list(per_home.values()))) if per_home else float("nan")

    @property
    def f1(self) -> float:
        per_home = self.home_f1()
        return float(np.mean(list(per_home.values()))) if per_home else float("nan")


@dataclass
class RunReport:
    run_id: int
    seen: list[str]
    unseen: list[str]
    forest_seed: int
    strategies: dict[str, StrategyResult]
    days: dict[str, tuple[int, int, int]]
    accuracy_ratio: dict[str, dict[str, float]]
    f1_ratio: dict[str, dict[str, float]]

    def aggregate(self, name: str) -> float:
        return self.strategies[name].accuracy


@dataclass(frozen=True)
class ExperimentConfig:
    n_seen: int = 5
    n_runs: int = 10
    split_day: int = 30
    window_days: int = DEFAULT_WINDOW_DAYS
    seed: int = 0
    n_trees: int = 100
    max_features: int = 5
    max_depth: int = 20
    n_folds: int = DEFAULT_FOLDS
    metrics: tuple[str, ...] = METRICS
    with_random: bool = True
    threshold_source: str = "cv"
    n_jobs: int = 1

    def forest_params(self, seed: int) -> ForestParams:
        return ForestParams(n_trees=self.n_trees, max_features=self.max_features,
                            max_depth=self.max_depth, seed=seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["metrics"] = list(self.metrics)
        d.pop("n_jobs")  # does not affect results
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def default_strategies(config: ExperimentConfig) -> dict[str, SelectionPolicy]:
    """Named strategies, in report order."""
    w, s = config.window_days, config.seed
    out = {
        "M_g": SelectionPolicy("oracle", candidates="global", regime="static", seed=s),
        "Best(m_i)": SelectionPolicy("oracle", candidates="ctx", regime="static", seed=s),
        "Best(M_g,m_i)": SelectionPolicy("oracle", regime="static", seed=s),
        "Best(M_g,m_i)^d": SelectionPolicy("oracle", regime="dynamic", window_days=w, seed=s),
    }
    kinds = [(m, SelectionPolicy("distance", metric=m, seed=s)) for m in config.metrics]
    if config.with_random:
        kinds.append(("rnd", SelectionPolicy("random", seed=s)))
    for regime in ("static", "dynamic"):
        for key, base in kinds:
            policy = SelectionPolicy(base.mode, base.metric, base.candidates, regime, w, s)
            out[_ratio_name(key, regime)] = policy
    return out


def _ratio_name(key: str, regime: str) -> str:
    return f"{key}/{regime}"


IDEAL = {"static": "Best(M_g,m_i)", "dynamic": "Best(M_g,m_i)^d"}


def evaluate_assignment(
    assignment: Assignment, stream: ScoredStream, class_names: Sequence[str]
) -> list[EpochResult]:
    """Per-day outcomes of an assignment; days without flows are skipped."""
    if stream.truth is None:
        raise ConfigError("evaluation needs labeled data")
    order = np.argsort(stream.days, kind="stable")
    sorted_days = stream.days[order]
    out = []
    for day, mid in zip(assignment.days, assignment.model_ids):
        lo, hi = np.searchsorted(sorted_days, [day, day + 1])
        if hi == lo:
            continue
        rows = np.sort(order[lo:hi])
        out.append(EpochResult(
            assignment.home_id, int(day), mid,
            stream.classes[mid][rows], stream.truth[rows], stream.accepted[mid][rows],
            tuple(class_names), stream.true_names[rows],
        ))
    return out


def _partition(homes: Sequence[str], config: ExperimentConfig, run: int) -> tuple[list[str], list[str]]:
    rng = rng_for(config.seed, "partition", run)
    pick = set(rng.choice(len(homes), size=config.n_seen, replace=False).tolist())
    seen = [h for i, h in enumerate(homes) if i in pick]
    unseen = [h for i, h in enumerate(homes) if i not in pick]
    return seen, unseen


def _check(dataset: Mapping[str, FlowTable], config: ExperimentConfig) -> None:
    if not 1 <= config.n_seen < len(dataset):
        raise ConfigError(f"n_seen={config.n_seen} needs 1 <= n_seen < {len(dataset)} homes")
    if config.n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    for home, table in dataset.items():
        if not table.has_labels:
            raise ConfigError(f"{home}: evaluation needs labeled flows")
        if not (table.epoch_day < config.split_day).any():
            raise ConfigError(f"{home}: no flows before split_day={config.split_day}")
        if not (table.epoch_day >= config.split_day).any():
            raise ConfigError(f"{home}: no flows on or after split_day={config.split_day}")


def run_experiment(
    dataset: Mapping[str, FlowTable],
    config: ExperimentConfig = ExperimentConfig(),
    strategies: Mapping[str, SelectionPolicy] | None = None,
) -> list[RunReport]:
    """Run the full protocol; home order is sorted by id."""
    _check(dataset, config)
    if strategies is None:
        strategies = default_strategies(config)
    homes = sorted(dataset)
    last_day = max(int(t.epoch_day.max()) for t in dataset.values())
    test_days = list(range(config.split_day, last_day + 1))
    reports = []
    for run in range(config.n_runs):
        seen, unseen = _partition(homes, config, run)
        forest_seed = derive_seed(config.seed, "forest", run)
        params = config.forest_params(forest_seed)
        train = {h: dataset[h].days(hi=config.split_day) for h in seen}
        names = class_names_of(train.values())
        models = train_contextualized(train, params, names, config.n_folds, config.threshold_source)
        models.append(train_global(train, params, names, config.n_folds, config.threshold_source))
        registry = ModelRegistry.from_models(models)
        reports.append(_evaluate_run(run, seen, unseen, forest_seed, registry, dataset,
                                     strategies, test_days, config))
    return reports


def _evaluate_run(run, seen, unseen, forest_seed, registry, dataset, strategies, test_days, config) -> RunReport:
    results = {name: StrategyResult(name, []) for name in strategies}
    for home in unseen:
        table = dataset[home]
        stream = score_stream(registry, table)
        window_rows = np.flatnonzero(table.epoch_day < config.split_day)
        for name, policy in strategies.items():
            if policy.regime == "static":
                a = assign_static(policy, registry, stream, window_rows, test_days, home)
            else:
                a = assign_dynamic(policy, registry, stream, test_days, home)
            res = results[name]
            res.assignments.append(a)
            acc_days, f1_days = {}, {}
            for ep in evaluate_assignment(a, stream, registry.class_names):
                acc = ep.accuracy
                p, r, f = ep.f1
                if acc is not None:
                    acc_days[ep.epoch_day] = acc
                f1_days[ep.epoch_day] = f
                res.rows.append({
                    "home_id": home, "epoch_day": ep.epoch_day, "model_id": ep.model_id,
                    "n_flows": ep.n_flows, "n_accepted": ep.n_accepted,
                    "accuracy": acc, "precision": p, "recall": r, "f1": f,
                })
            res.daily_accuracy[home] = acc_days
            res.daily_f1[home] = f1_days

    days = {}
    dyn, sta = results.get(IDEAL["dynamic"]), results.get(IDEAL["static"])
    if dyn is not None and sta is not None:
        for home in unseen:
            days[home] = compare_days(dyn.daily_accuracy[home], sta.daily_accuracy[home])

    acc_ratio: dict[str, dict[str, float]] = {"static": {}, "dynamic": {}}
    f1_ratio: dict[str, dict[str, float]] = {"static": {}, "dynamic": {}}
    for regime, ideal_name in IDEAL.items():
        ideal = results.get(ideal_name)
        if ideal is None:
            continue
        for key in RATIO_KEYS:
            name = _ratio_name(key, regime)
            if name in results:
                acc_ratio[regime][key] = ratio_to_ideal(results[name].accuracy, ideal.accuracy)
                f1_ratio[regime][key] = ratio_to_ideal(results[name].f1, ideal.f1)
    return RunReport(run, seen, unseen, forest_seed, results, days, acc_ratio, f1_ratio)


# ---------------------------------------------------------------- reports


RUN_COLUMNS = ("strategy", "home_id", "epoch_day", "model_id", "n_flows", "n_accepted",
               "accuracy", "precision", "recall", "f1")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _num(v: float, digits: int = 3) -> str:
    return "-" if v != v else f"{v:.{digits}f}"


def write_reports(reports: Sequence[RunReport], out_dir: str | Path, config: ExperimentConfig) -> list[Path]:
    """``run_XX.csv`` per run, ``runs.csv`` with aggregates, and ``summary.txt``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for rep in reports:
        path = out_dir / f"run_{rep.run_id + 1:02d}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RUN_COLUMNS)
            for name, res in rep.strategies.items():
                for row in res.rows:
                    w.writerow([name] + [_fmt(row[c]) for c in RUN_COLUMNS[1:]])
        written.append(path)

    path = out_dir / "runs.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "seen", "unseen", "strategy", "accuracy", "f1", "accuracy_ratio", "f1_ratio"])
        for rep in reports:
            for name, res in rep.strategies.items():
                key, _, regime = name.partition("/")
                ar = rep.accuracy_ratio.get(regime, {}).get(key)
                fr = rep.f1_ratio.get(regime, {}).get(key)
                w.writerow([rep.run_id + 1, " ".join(rep.seen), " ".join(rep.unseen), name,
                            _fmt(res.accuracy), _fmt(res.f1), _fmt(ar), _fmt(fr)])
    written.append(path)

    path = out_dir / "summary.txt"
    path.write_text(summary_text(reports, config), encoding="utf-8")
    written.append(path)
    return written


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> list[str]:
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    line = lambda r: "  ".join(str(c).rjust(w) for c, w in zip(r, widths))
    return [line(header), line(["-" * w for w in widths]), *map(line, rows)]


def summary_text(reports: Sequence[RunReport], config: ExperimentConfig) -> str:
    out = [f"config {config.fingerprint()} {json.dumps(config.to_dict(), sort_keys=True)}", ""]

    cols = [c for c in ("M_g", "Best(m_i)", "Best(M_g,m_i)", "Best(M_g,m_i)^d") if c in reports[0].strategies]
    rows = [[str(r.run_id + 1)] + [_num(r.aggregate(c)) for c in cols] for r in reports]
    rows.append(["Avg."] + [_num(float(np.mean([r.aggregate(c) for r in reports]))) for c in cols])
    out += ["Accuracy per run (mean of unseen homes' mean daily accuracy)"]
    out += _table(["Run", *cols], rows) + [""]

    if reports[0].days:
        homes = sorted({h for r in reports for h in r.days})
        rows = []
        for i, label in enumerate(("d>s", "d<s", "d=s")):
            cells = []
            for h in homes:
                counts = [r.days[h][i] for r in reports if h in r.days]
                cells.append(f"{np.mean(counts):.1f}")
            rows.append([label, *cells])
        out += ["Days dynamic vs static oracle (mean over runs where the home is unseen)"]
        out += _table(["", *homes], rows) + [""]

    for title, attr in (("Accuracy ratio to ideal", "accuracy_ratio"), ("F1 ratio to ideal", "f1_ratio")):
        rows = []
        for regime in ("dynamic", "static"):
            for key in RATIO_KEYS:
                vals = [getattr(r, attr)[regime].get(key) for r in reports]
                if any(v is None for v in vals):
                    continue
                flag = " >1" if regime == "static" and any(v > 1 for v in vals) else ""
                rows.append([regime, key.upper()] + [_num(v) for v in vals] + [_num(float(np.mean(vals))) + flag])
        if rows:
            header = ["regime", "metric"] + [str(r.run_id + 1) for r in reports] + ["Avg."]
            out += [title] + _table(header, rows) + [""]
    return "\n".join(out)
