"""Global and per-home models with their cross-validated score distributions.

On disk a registry is a directory holding::

    manifest.json           ids, class names, hyperparameters, file names
    <model_id>.model        forest + thresholds (see :mod:`iotdrift.forest`)
    <model_id>.scores.txt   pooled training score sample, one float per line
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .flows import FlowTable
from .forest import (
    ClassThresholds,
    EmptyTrainingSet,
    Forest,
    ForestParams,
    fit_thresholds,
    load_model,
    save_model,
    thresholds_from_scores,
    train_forest,
)
from .seeding import derive_seed

GLOBAL_ID = "GLOBAL"
DEFAULT_FOLDS = 10
MANIFEST = "manifest.json"
REGISTRY_FORMAT = 1


class RegistryError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ScoreDistribution:
    """Sorted sample of classification scores and its empirical CDF."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.sort(np.asarray(self.samples, dtype=np.float64).ravel())
        if len(s) == 0:
            raise ValueError("score distribution needs at least one sample")
        if s[0] < 0 or s[-1] > 1:
            raise ValueError("scores must lie in [0, 1]")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)

    @property
    def n(self) -> int:
        return len(self.samples)

    def cdf(self, x) -> np.ndarray:
        return np.searchsorted(self.samples, x, side="right") / self.n


@dataclass(frozen=True, eq=False)
class ContextModel:
    model_id: str
    forest: Forest
    thresholds: ClassThresholds
    train_scores: ScoreDistribution | None = None

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Classes, scores and the accepted mask for every row of ``X``."""
        classes, scores = self.forest.predict_batch(X)
        return classes, scores, self.thresholds.accept(classes, scores)


def encode_labels(labels: Sequence[str | None], class_names: Sequence[str]) -> np.ndarray:
    """Class indices for string labels; unknown or absent labels map to -1."""
    index = {name: i for i, name in enumerate(class_names)}
    return np.array([index.get(lab, -1) for lab in labels], dtype=np.int64)


def class_names_of(tables: Iterable[FlowTable]) -> tuple[str, ...]:
    names: set[str] = set()
    for t in tables:
        if not t.has_labels:
            raise RegistryError("training data must be fully labeled")
        names.update(t.labels)
    return tuple(sorted(names))


def fold_assignment(n_rows: int, seed: int, n_folds: int = DEFAULT_FOLDS) -> np.ndarray:
    """Fold index per row: round-robin over a seeded permutation of rows.

    Uses ``min(n_folds, n_rows)`` folds, so fewer than ``n_folds`` rows
    degrades to leave-one-out.
    """
    k = min(n_folds, n_rows)
    perm = np.random.Generator(np.random.PCG64(derive_seed(seed, "folds"))).permutation(n_rows)
    folds = np.empty(n_rows, dtype=np.int64)
    folds[perm] = np.arange(n_rows) % k
    return folds


def cross_validate(
    features: np.ndarray,
    labels: np.ndarray,
    class_names: Sequence[str],
    params: ForestParams,
    n_folds: int = DEFAULT_FOLDS,
    full_forest: Forest | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Held-out (class, score) for every row from k-fold cross-validation.

    Fold forests reuse ``params`` with seed ``derive_seed(params.seed,
    "fold", i)``. A single row cannot be cross-validated and is scored by
    ``full_forest`` instead.
    """
    n = len(labels)
    if n == 0:
        raise EmptyTrainingSet("no rows for score distribution")
    if n == 1:
        if full_forest is None:
            full_forest = train_forest(features, labels, params, class_names)
        return full_forest.predict_batch(features)
    folds = fold_assignment(n, params.seed, n_folds)
    classes = np.empty(n, dtype=np.int64)
    scores = np.empty(n, dtype=np.float64)
    for i in range(folds.max() + 1):
        held = folds == i
        fold_params = params.replace(seed=derive_seed(params.seed, "fold", i))
        forest = train_forest(features[~held], labels[~held], fold_params, class_names)
        classes[held], scores[held] = forest.predict_batch(features[held])
    return classes, scores


def build_score_distribution(
    features: np.ndarray,
    labels: np.ndarray,
    class_names: Sequence[str],
    params: ForestParams,
    n_folds: int = DEFAULT_FOLDS,
    full_forest: Forest | None = None,
) -> ScoreDistribution:
    """Pooled held-out scores of :func:`cross_validate`."""
    return ScoreDistribution(cross_validate(features, labels, class_names, params, n_folds, full_forest)[1])


THRESHOLD_SOURCES = ("cv", "resubstitution")


def train_model(
    model_id: str,
    table: FlowTable,
    class_names: Sequence[str],
    params: ForestParams,
    n_folds: int = DEFAULT_FOLDS,
    with_distribution: bool = True,
    threshold_source: str = "cv",
) -> ContextModel:
    """Forest on all rows, thresholds and the CV score distribution.

    With ``threshold_source="cv"`` the class thresholds come from the held-out
    predictions of the same cross-validation; ``"resubstitution"`` scores the
    training rows with the full forest instead.
    """
    if threshold_source not in THRESHOLD_SOURCES:
        raise ValueError(f"unknown threshold source {threshold_source!r}")
    if len(table) == 0:
        raise EmptyTrainingSet(f"{model_id}: no training rows")
    y = encode_labels(table.labels, class_names)
    if (y < 0).any():
        raise RegistryError(f"{model_id}: unlabeled or unknown-class rows in training data")
    forest = train_forest(table.features, y, params, class_names)
    dist = cv = None
    if with_distribution or threshold_source == "cv":
        cv = cross_validate(table.features, y, class_names, params, n_folds, forest)
    if threshold_source == "cv":
        thresholds = thresholds_from_scores(cv[0], cv[1], y, forest.n_classes)
    else:
        thresholds = fit_thresholds(forest, table.features, y)
    if with_distribution:
        dist = ScoreDistribution(cv[1])
    return ContextModel(model_id, forest, thresholds, dist)


def train_contextualized(
    per_home: Mapping[str, FlowTable],
    params: ForestParams = ForestParams(),
    class_names: Sequence[str] | None = None,
    n_folds: int = DEFAULT_FOLDS,
    threshold_source: str = "cv",
) -> list[ContextModel]:
    """One model per home, trained only on that home's rows, in mapping order."""
    if not per_home:
        raise EmptyTrainingSet("no homes")
    if class_names is None:
        class_names = class_names_of(per_home.values())
    return [train_model(h, t, class_names, params, n_folds, threshold_source=threshold_source)
            for h, t in per_home.items()]


def train_global(
    per_home: Mapping[str, FlowTable],
    params: ForestParams = ForestParams(),
    class_names: Sequence[str] | None = None,
    n_folds: int = DEFAULT_FOLDS,
    threshold_source: str = "cv",
) -> ContextModel:
    """The GLOBAL model on all homes concatenated (home order, then file order)."""
    if class_names is None:
        class_names = class_names_of(per_home.values())
    table = FlowTable.concat(list(per_home.values()))
    return train_model(GLOBAL_ID, table, class_names, params, n_folds, threshold_source=threshold_source)


CANDIDATE_SETS = ("ctx", "ctx+global", "global")


@dataclass
class ModelRegistry:
    """Models keyed by id; order is the contextualized models then GLOBAL."""

    models: dict[str, ContextModel] = field(default_factory=dict)

    @classmethod
    def from_models(cls, models: Iterable[ContextModel]) -> "ModelRegistry":
        reg = cls()
        for m in models:
            reg.add(m)
        return reg

    def add(self, model: ContextModel) -> None:
        if model.model_id in self.models:
            raise RegistryError(f"duplicate model id {model.model_id}")
        if self.models and model.forest.class_names != self.class_names:
            raise RegistryError(f"{model.model_id}: class list differs from the registry's")
        self.models[model.model_id] = model

    @property
    def class_names(self) -> tuple[str, ...]:
        return next(iter(self.models.values())).forest.class_names

    @property
    def order(self) -> list[str]:
        ctx = [m for m in self.models if m != GLOBAL_ID]
        return ctx + ([GLOBAL_ID] if GLOBAL_ID in self.models else [])

    def __getitem__(self, model_id: str) -> ContextModel:
        return self.models[model_id]

    def __len__(self) -> int:
        return len(self.models)

    def candidates(self, which: str = "ctx+global") -> list[str]:
        if which not in CANDIDATE_SETS:
            raise ValueError(f"unknown candidate set {which!r}")
        order = self.order
        if which == "ctx":
            out = [m for m in order if m != GLOBAL_ID]
        elif which == "global":
            out = [m for m in order if m == GLOBAL_ID]
        else:
            out = order
        if not out:
            raise RegistryError(f"candidate set {which!r} is empty for this registry")
        return out

    # ------------------------------------------------------------ persistence

    def save(self, directory: str | Path, extra: Mapping | None = None) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for model_id in self.order:
            m = self.models[model_id]
            model_file = f"{model_id}.model"
            save_model(directory / model_file, m.forest, m.thresholds)
            entry = {"id": model_id, "model": model_file, "scores": None,
                     "params": asdict(m.forest.params)}
            if m.train_scores is not None:
                entry["scores"] = f"{model_id}.scores.txt"
                (directory / entry["scores"]).write_text(
                    "".join(f"{v!r}\n" for v in m.train_scores.samples.tolist()), encoding="utf-8"
                )
            entries.append(entry)
        manifest = {
            "format": REGISTRY_FORMAT,
            "class_names": list(self.class_names),
            "models": entries,
            **(dict(extra) if extra else {}),
        }
        path = directory / MANIFEST
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, directory: str | Path) -> "ModelRegistry":
        directory = Path(directory)
        try:
            manifest = json.loads((directory / MANIFEST).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise RegistryError(f"no registry manifest in {directory}") from None
        reg = cls()
        for entry in manifest["models"]:
            forest, thresholds = load_model(directory / entry["model"])
            if thresholds is None:
                raise RegistryError(f"{entry['id']}: model file without thresholds")
            dist = None
            if entry.get("scores"):
                text = (directory / entry["scores"]).read_text(encoding="utf-8").split()
                dist = ScoreDistribution(np.array([float(v) for v in text]))
            reg.add(ContextModel(entry["id"], forest, thresholds, dist))
        if list(reg.class_names) != manifest["class_names"]:
            raise RegistryError("manifest class names disagree with model files")
        return reg


def manifest_digest(directory: str | Path) -> str:
    """sha256 over the manifest and every file it names."""
    directory = Path(directory)
    manifest_bytes = (directory / MANIFEST).read_bytes()
    h = hashlib.sha256(manifest_bytes)
    for entry in json.loads(manifest_bytes)["models"]:
        for key in ("model", "scores"):
            if entry.get(key):
                h.update((directory / entry[key]).read_bytes())
    return h.hexdigest()
