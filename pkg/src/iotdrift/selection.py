"""Model selection for an unseen home: oracle, score distance, or random.

Static selection picks one model from an assignment window (the unseen home's
training-period data) and keeps it for every test day. Dynamic selection
re-selects every test day ``t`` from the flows of days ``(t - window_days, t]``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .distances import ES_MIN_SAMPLES, METRICS, DegenerateCovariance, distance
from .flows import FlowTable
from .metrics import NoAccepted, macro_accuracy
from .registry import CANDIDATE_SETS, GLOBAL_ID, ContextModel, ModelRegistry, ScoreDistribution, encode_labels
from .seeding import derive_seed

MODES = ("oracle", "distance", "random")
REGIMES = ("static", "dynamic")
DEFAULT_WINDOW_DAYS = 30
ASSIGNMENT_COLUMNS = ("home_id", "epoch_day", "model_id", "metric", "distance_or_accuracy")


class NoData(ValueError):
    pass


class MissingLabels(ValueError):
    """Oracle selection was asked for on data without labels."""


@dataclass(frozen=True)
class SelectionPolicy:
    mode: str = "distance"
    metric: str = "ks"
    candidates: str = "ctx+global"
    regime: str = "static"
    window_days: int = DEFAULT_WINDOW_DAYS
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "distance" and self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.candidates not in CANDIDATE_SETS:
            raise ValueError(f"unknown candidate set {self.candidates!r}")
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.regime == "dynamic" and self.window_days < 1:
            raise ValueError("window_days must be >= 1")

    @property
    def name(self) -> str:
        how = {"oracle": "oracle", "random": "rnd"}.get(self.mode, self.metric)
        return f"{how}/{self.candidates}/{self.regime}"


@dataclass
class Assignment:
    home_id: str
    days: list[int] = field(default_factory=list)
    model_ids: list[str] = field(default_factory=list)
    metrics: list[str] = field(default_factory=list)
    values: list[float | None] = field(default_factory=list)

    def append(self, day: int, model_id: str, metric: str, value: float | None) -> None:
        self.days.append(int(day))
        self.model_ids.append(model_id)
        self.metrics.append(metric)
        self.values.append(value)

    def as_dict(self) -> dict[int, str]:
        return dict(zip(self.days, self.model_ids))


# ---------------------------------------------------------------- scored streams


@dataclass
class ScoredStream:
    """Every candidate's predictions on one home's flows, computed once.

    ``truth`` holds class indices (-1 for classes unknown to the registry) and
    ``true_names`` the raw labels; both are ``None`` for unlabeled data.
    """

    days: np.ndarray
    classes: dict[str, np.ndarray]
    scores: dict[str, np.ndarray]
    accepted: dict[str, np.ndarray]
    truth: np.ndarray | None = None
    true_names: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.days)


def score_stream(registry: ModelRegistry, table: FlowTable, model_ids: Sequence[str] | None = None) -> ScoredStream:
    ids = list(model_ids) if model_ids is not None else registry.order
    classes, scores, accepted = {}, {}, {}
    for mid in ids:
        classes[mid], scores[mid], accepted[mid] = registry[mid].predict(table.features)
    truth = names = None
    if table.has_labels:
        truth = encode_labels(table.labels, registry.class_names)
        names = table.labels
    return ScoredStream(table.epoch_day.copy(), classes, scores, accepted, truth, names)


# ---------------------------------------------------------------- single selections


def _fallback(ids: Sequence[str]) -> str:
    return GLOBAL_ID if GLOBAL_ID in ids else ids[0]


def _argbest(values: Sequence[float], maximise: bool) -> int:
    best = 0
    for i, v in enumerate(values):
        if (v > values[best]) if maximise else (v < values[best]):
            best = i
    return best


def _oracle(ids: Sequence[str], stream: ScoredStream, rows: np.ndarray) -> tuple[str, float]:
    if stream.truth is None:
        raise MissingLabels("oracle selection needs labeled data")
    if len(rows) == 0:
        raise NoData("empty window")
    truth = stream.truth[rows]
    accs = []
    for mid in ids:
        try:
            accs.append(macro_accuracy(stream.classes[mid][rows], truth, stream.accepted[mid][rows]))
        except NoAccepted:
            accs.append(0.0)
    i = _argbest(accs, maximise=True)
    return ids[i], accs[i]


def window_distance(metric: str, train: ScoreDistribution, window_scores: np.ndarray) -> tuple[float, str]:
    """Distance of window scores to a training distribution, and the metric used.

    ES falls back to KS below its minimum sample size and counts as distance
    0 when the pooled sample is constant.
    """
    if metric == "es" and min(len(window_scores), train.n) < ES_MIN_SAMPLES:
        metric = "ks"
    try:
        return distance(metric, train, window_scores), metric
    except DegenerateCovariance:
        return 0.0, metric


def _by_distance(
    ids: Sequence[str],
    train: Mapping[str, ScoreDistribution],
    scores: Mapping[str, np.ndarray],
    metric: str,
) -> tuple[str, float, str]:
    # inputs carry no labels by construction
    if any(len(scores[mid]) == 0 for mid in ids):
        raise NoData("empty window")
    dists, used = [], metric
    for mid in ids:
        d, used = window_distance(metric, train[mid], scores[mid])
        dists.append(d)
    i = _argbest(dists, maximise=False)
    return ids[i], dists[i], used


def select_oracle(candidates: Sequence[ContextModel], window: FlowTable) -> tuple[str, float]:
    """Candidate with the highest macro accuracy on labeled window data."""
    registry = ModelRegistry.from_models(candidates)
    ids = [c.model_id for c in candidates]
    return _oracle(ids, score_stream(registry, window, ids), np.arange(len(window)))


def select_by_distance(candidates: Sequence[ContextModel], features: np.ndarray, metric: str) -> tuple[str, float]:
    """Candidate whose window score distribution is closest to its training one.

    Takes bare feature rows: labels cannot reach this decision.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if len(features) == 0:
        raise NoData("empty window")
    ids = [c.model_id for c in candidates]
    train = {c.model_id: c.train_scores for c in candidates}
    scores = {c.model_id: c.forest.predict_batch(features)[1] for c in candidates}
    mid, d, _ = _by_distance(ids, train, scores, metric)
    return mid, d


def select_random(candidates: Sequence[str], seed: int, draw_index: int) -> str:
    """Uniform draw, reproducible from ``(seed, draw_index)``."""
    if not candidates:
        raise ValueError("no candidates")
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "draw", draw_index)))
    return candidates[int(rng.integers(len(candidates)))]


# ---------------------------------------------------------------- regimes


def _select(
    policy: SelectionPolicy,
    registry: ModelRegistry,
    ids: Sequence[str],
    stream: ScoredStream,
    rows: np.ndarray,
    home_id: str,
    draw_index: int,
) -> tuple[str, str, float | None]:
    if policy.mode == "random":
        return select_random(ids, derive_seed(policy.seed, "random", home_id), draw_index), "random", None
    if len(rows) == 0:
        raise NoData("empty window")
    if policy.mode == "oracle":
        mid, acc = _oracle(ids, stream, rows)
        return mid, "accuracy", acc
    train = {mid: registry[mid].train_scores for mid in ids}
    if any(t is None for t in train.values()):
        raise ValueError("distance selection needs every candidate's training score distribution")
    scores = {mid: stream.scores[mid][rows] for mid in ids}
    mid, d, used = _by_distance(ids, train, scores, policy.metric)
    return mid, used, d


def assign_static(
    policy: SelectionPolicy,
    registry: ModelRegistry,
    stream: ScoredStream,
    window_rows: np.ndarray,
    test_days: Sequence[int],
    home_id: str,
) -> Assignment:
    ids = registry.candidates(policy.candidates)
    try:
        mid, metric, value = _select(policy, registry, ids, stream, window_rows, home_id, 0)
    except NoData:
        mid, metric, value = _fallback(ids), "fallback", None
    out = Assignment(home_id)
    for day in test_days:
        out.append(day, mid, metric, value)
    return out


def assign_dynamic(
    policy: SelectionPolicy,
    registry: ModelRegistry,
    stream: ScoredStream,
    test_days: Sequence[int],
    home_id: str,
) -> Assignment:
    ids = registry.candidates(policy.candidates)
    order = np.argsort(stream.days, kind="stable")
    sorted_days = stream.days[order]
    out = Assignment(home_id)
    previous: str | None = None
    for day in test_days:
        lo = np.searchsorted(sorted_days, day - policy.window_days, side="right")
        hi = np.searchsorted(sorted_days, day, side="right")
        active = hi > np.searchsorted(sorted_days, day, side="left")
        rows = np.sort(order[lo:hi])
        if not active or len(rows) == 0:
            mid = previous if previous is not None else _fallback(ids)
            out.append(day, mid, "inactive" if previous is not None else "fallback", None)
        else:
            mid, metric, value = _select(policy, registry, ids, stream, rows, home_id, int(day))
            out.append(day, mid, metric, value)
        previous = mid
    return out


def run_static(
    policy: SelectionPolicy,
    registry: ModelRegistry,
    window: FlowTable,
    test_days: Sequence[int],
    home_id: str = "",
) -> Assignment:
    """Select once on ``window`` and assign the choice to every test day."""
    ids = registry.candidates(policy.candidates)
    data = window if policy.mode == "oracle" else window.unlabeled()
    if policy.mode == "oracle" and len(window) and not window.has_labels:
        raise MissingLabels("oracle selection needs labeled data")
    stream = score_stream(registry, data, ids)
    return assign_static(policy, registry, stream, np.arange(len(data)), test_days, home_id)


def run_dynamic(
    policy: SelectionPolicy,
    registry: ModelRegistry,
    stream_table: FlowTable,
    test_days: Sequence[int],
    home_id: str = "",
) -> Assignment:
    """Re-select on each test day from the trailing window of ``stream_table``."""
    ids = registry.candidates(policy.candidates)
    data = stream_table if policy.mode == "oracle" else stream_table.unlabeled()
    if policy.mode == "oracle" and len(stream_table) and not stream_table.has_labels:
        raise MissingLabels("oracle selection needs labeled data")
    stream = score_stream(registry, data, ids)
    return assign_dynamic(policy, registry, stream, test_days, home_id)


def write_assignments(path: str | Path, assignments: Sequence[Assignment]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ASSIGNMENT_COLUMNS)
        for a in assignments:
            for day, mid, metric, value in zip(a.days, a.model_ids, a.metrics, a.values):
                writer.writerow([a.home_id, day, mid, metric, "" if value is None else repr(float(value))])


def read_assignments(path: str | Path) -> list[Assignment]:
    out: dict[str, Assignment] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != list(ASSIGNMENT_COLUMNS):
            raise ValueError(f"{path}: not an assignment file")
        for home, day, mid, metric, value in reader:
            out.setdefault(home, Assignment(home)).append(int(day), mid, metric, float(value) if value else None)
    return list(out.values())
