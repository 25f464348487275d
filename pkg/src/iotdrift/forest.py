"""Multi-class random forest with vote-fraction scores and per-class thresholds.

Trees are grown with Gini impurity on a bootstrap sample. The bootstrap is
represented as integer row multiplicities, which is exactly equivalent to
growing on the resampled rows with duplicates. Each tree draws all of its
randomness (bootstrap and split-feature sampling) from a splitmix64 stream
seeded with ``derive_seed(rng_seed, "tree", tree_index)``, so trees can be
grown in any order or in parallel and yield the same forest.

A prediction's score is the fraction of trees voting for the winning class;
vote ties go to the lowest class index.
"""
from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence
import warnings

import numpy as np
from numba import njit

from .seeding import derive_seed

MODEL_MAGIC = b"IOTDRFT\x00"
MODEL_VERSION = 1
DEFAULT_TAU = 0.5


class EmptyTrainingSet(ValueError):
    pass


class SingleClassWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_features: int = 5
    max_depth: int = 20
    seed: int = 0
    bootstrap: bool = True
    min_samples_split: int = 2

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_features < 1:
            raise ValueError("max_features must be >= 1")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")

    def replace(self, **changes) -> "ForestParams":
        return ForestParams(**{**asdict(self), **changes})


# ---------------------------------------------------------------- numba kernels

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, nogil=True)
def _splitmix_next(state):
    state[0] = state[0] + _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _randbelow(state, n):
    return np.int64(_splitmix_next(state) % np.uint64(n))


@njit(cache=True, nogil=True)
def _grow_tree(Xt, y, n_classes, presorted, seed, bootstrap, max_features, max_depth, min_split):
    # Xt is feature-major (n_features, n_rows); presorted[f] orders rows by Xt[f]
    n_feat, n = Xt.shape
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed)

    mult = np.zeros(n, dtype=np.int64)
    if bootstrap:
        for _ in range(n):
            mult[_randbelow(state, n)] += 1
    else:
        mult[:] = 1

    # compact the drawn rows to local ids 0..m-1 (in row order)
    local = np.full(n, -1, dtype=np.int32)
    m = 0
    for i in range(n):
        if mult[i] > 0:
            local[i] = m
            m += 1
    yl = np.empty(m, dtype=np.int32)
    wl = np.empty(m, dtype=np.int64)
    for i in range(n):
        if mult[i] > 0:
            yl[local[i]] = y[i]
            wl[local[i]] = mult[i]

    # per feature: local ids and their values, sorted by value; every node
    # owns the same [lo, hi) segment in every feature's arrays
    seg = np.empty((n_feat, m), dtype=np.int32)
    val = np.empty((n_feat, m), dtype=np.float64)
    for f in range(n_feat):
        k = 0
        for j in range(n):
            r = presorted[f, j]
            if mult[r] > 0:
                seg[f, k] = local[r]
                val[f, k] = Xt[f, r]
                k += 1

    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    leaf_slot = np.full(cap, -1, dtype=np.int32)
    leaf_counts = np.zeros((m + 1, n_classes), dtype=np.int32)

    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = m
    st_depth[0] = 0
    sp = 1
    n_nodes = 1
    n_leaves = 0

    counts = np.zeros(n_classes, dtype=np.int64)
    lc = np.zeros(n_classes, dtype=np.int64)
    rc = np.zeros(n_classes, dtype=np.int64)
    perm = np.arange(n_feat)
    goleft = np.zeros(m, dtype=np.bool_)
    ibuf = np.empty(m, dtype=np.int32)
    vbuf = np.empty(m, dtype=np.float64)

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        lo = st_lo[sp]
        hi = st_hi[sp]
        depth = st_depth[sp]

        counts[:] = 0
        total = 0
        for j in range(lo, hi):
            r = seg[0, j]
            counts[yl[r]] += wl[r]
            total += wl[r]
        sq_parent = 0
        top = 0
        for c in range(n_classes):
            sq_parent += counts[c] * counts[c]
            if counts[c] > top:
                top = counts[c]

        best_f = -1
        best_thr = 0.0
        if total >= min_split and depth < max_depth and top < total:
            parent_proxy = sq_parent / total
            best_proxy = parent_proxy
            for f in range(n_feat):
                perm[f] = f
            visited = 0
            for j in range(n_feat):
                if visited >= max_features:
                    break
                k = j + _randbelow(state, n_feat - j)
                tmp = perm[j]
                perm[j] = perm[k]
                perm[k] = tmp
                f = perm[j]
                if val[f, lo] == val[f, hi - 1]:
                    continue
                visited += 1
                lc[:] = 0
                for c in range(n_classes):
                    rc[c] = counts[c]
                sq_l = 0
                sq_r = sq_parent
                w_l = 0
                w_r = total
                for i in range(lo, hi - 1):
                    r = seg[f, i]
                    c = yl[r]
                    w = wl[r]
                    sq_l += 2 * lc[c] * w + w * w
                    lc[c] += w
                    sq_r += -2 * rc[c] * w + w * w
                    rc[c] -= w
                    w_l += w
                    w_r -= w
                    a = val[f, i]
                    b = val[f, i + 1]
                    if a < b:
                        proxy = sq_l / w_l + sq_r / w_r
                        if proxy > best_proxy:
                            best_proxy = proxy
                            best_f = f
                            thr = a + (b - a) * 0.5
                            if thr >= b:
                                thr = a
                            best_thr = thr
            if best_f >= 0 and not (best_proxy - parent_proxy > 1e-12 * parent_proxy):
                best_f = -1

        if best_f < 0:
            leaf_slot[node] = n_leaves
            for c in range(n_classes):
                leaf_counts[n_leaves, c] = counts[c]
            n_leaves += 1
            continue

        n_left = 0
        for j in range(lo, hi):
            gl = val[best_f, j] <= best_thr
            goleft[seg[best_f, j]] = gl
            if gl:
                n_left += 1
        for f in range(n_feat):
            pl = 0
            pr = n_left
            for j in range(lo, hi):
                r = seg[f, j]
                g = goleft[r]
                dst = pl if g else pr
                ibuf[dst] = r
                vbuf[dst] = val[f, j]
                pl += g
                pr += 1 - g
            for j in range(hi - lo):
                seg[f, lo + j] = ibuf[j]
                val[f, lo + j] = vbuf[j]

        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        n_nodes += 2
        # right pushed first so the left subtree is grown first
        st_node[sp] = right[node]
        st_lo[sp] = lo + n_left
        st_hi[sp] = hi
        st_depth[sp] = depth + 1
        sp += 1
        st_node[sp] = left[node]
        st_lo[sp] = lo
        st_hi[sp] = lo + n_left
        st_depth[sp] = depth + 1
        sp += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        leaf_slot[:n_nodes].copy(),
        leaf_counts[:n_leaves].copy(),
    )


@njit(cache=True, nogil=True)
def _vote(X, feature, threshold, left, right, leaf_class, roots, n_classes):
    n = X.shape[0]
    votes = np.zeros((n, n_classes), dtype=np.int32)
    for i in range(n):
        for t in range(roots.shape[0]):
            node = roots[t]
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            votes[i, leaf_class[node]] += 1
    return votes


# ---------------------------------------------------------------- data types


@dataclass(frozen=True, eq=False)
class DecisionTree:
    """Array-encoded tree. Leaves have ``feature == -1`` and a row in
    ``leaf_counts`` given by ``leaf_slot``; children indices are local."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_slot: np.ndarray
    leaf_counts: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def leaf_classes(self) -> np.ndarray:
        """Per-node majority class of the leaf histogram (-1 for internal nodes)."""
        out = np.full(self.n_nodes, -1, dtype=np.int32)
        leaves = self.leaf_slot >= 0
        out[leaves] = np.argmax(self.leaf_counts[self.leaf_slot[leaves]], axis=1)
        return out


@dataclass(frozen=True)
class ScoredPrediction:
    class_index: int
    score: float


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple[DecisionTree, ...]
    class_names: tuple[str, ...]
    params: ForestParams
    n_features: int

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @cached_property
    def _packed(self):
        offsets = np.cumsum([0] + [t.n_nodes for t in self.trees])
        feature = np.concatenate([t.feature for t in self.trees]).astype(np.int32)
        threshold = np.concatenate([t.threshold for t in self.trees])
        left = np.concatenate([np.where(t.left >= 0, t.left + o, -1) for t, o in zip(self.trees, offsets)])
        right = np.concatenate([np.where(t.right >= 0, t.right + o, -1) for t, o in zip(self.trees, offsets)])
        leaf_class = np.concatenate([t.leaf_classes() for t in self.trees])
        roots = offsets[:-1].astype(np.int64)
        return feature, threshold, left.astype(np.int32), right.astype(np.int32), leaf_class, roots

    def votes(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return _vote(X, *self._packed, self.n_classes)

    def predict_batch(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Predicted class indices and vote-fraction scores for every row."""
        votes = self.votes(X)
        classes = np.argmax(votes, axis=1)
        scores = votes[np.arange(len(classes)), classes] / len(self.trees)
        return classes.astype(np.int64), scores


def _presort(Xt: np.ndarray) -> np.ndarray:
    return np.argsort(Xt, axis=1, kind="stable").astype(np.int32)


def train_forest(
    features: np.ndarray,
    labels: Sequence[int],
    params: ForestParams = ForestParams(),
    class_names: Sequence[str] | None = None,
    n_jobs: int = 1,
) -> Forest:
    """Grow a forest on ``features`` (rows in canonical order) and integer labels.

    ``class_names`` fixes the class list (and so the vote vector length); when
    omitted, classes are ``0..max(labels)`` named by their index and each must
    occur at least once.
    """
    X = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyTrainingSet("no training rows")
    if len(y) != len(X):
        raise ValueError("features and labels differ in length")
    if class_names is None:
        n_classes = int(y.max()) + 1
        if len(np.unique(y)) != n_classes:
            raise ValueError("every class index must occur at least once")
        class_names = [str(c) for c in range(n_classes)]
    n_classes = len(class_names)
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("label index outside the class list")
    if len(np.unique(y)) == 1:
        warnings.warn("single class in training data; forest is constant", SingleClassWarning, stacklevel=2)

    Xt = np.ascontiguousarray(X.T)
    presorted = _presort(Xt)
    max_features = min(params.max_features, X.shape[1])

    def grow(t: int) -> DecisionTree:
        seed = derive_seed(params.seed, "tree", t)
        return DecisionTree(*_grow_tree(
            Xt, y, n_classes, presorted, np.uint64(seed), params.bootstrap,
            max_features, params.max_depth, params.min_samples_split,
        ))

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            trees = tuple(pool.map(grow, range(params.n_trees)))
    else:
        trees = tuple(grow(t) for t in range(params.n_trees))
    return Forest(trees, tuple(class_names), params, X.shape[1])


def predict(forest: Forest, feature_vector: np.ndarray) -> ScoredPrediction:
    classes, scores = forest.predict_batch(np.asarray(feature_vector, dtype=np.float64).reshape(1, -1))
    return ScoredPrediction(int(classes[0]), float(scores[0]))


# ---------------------------------------------------------------- thresholds


@dataclass(frozen=True, eq=False)
class ClassThresholds:
    tau: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=np.float64)
        if tau.ndim != 1 or ((tau < 0) | (tau > 1)).any():
            raise ValueError("thresholds must be a vector in [0, 1]")
        object.__setattr__(self, "tau", tau)

    def accept(self, classes: np.ndarray, scores: np.ndarray) -> np.ndarray:
        return np.asarray(scores) >= self.tau[np.asarray(classes)]


class Discarded:
    """Marker returned by :func:`predict_accepted` for rejected predictions."""

    def __repr__(self) -> str:
        return "Discarded"


DISCARDED = Discarded()


def thresholds_from_scores(
    classes: np.ndarray, scores: np.ndarray, labels: np.ndarray, n_classes: int
) -> ClassThresholds:
    """Mean score of correct predictions per class.

    Classes with no correct prediction get the mean of the defined values, or
    0.5 when none is defined.
    """
    classes = np.asarray(classes)
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    correct = classes == labels
    tau = np.full(n_classes, np.nan)
    for c in range(n_classes):
        hit = correct & (labels == c)
        if hit.any():
            tau[c] = scores[hit].mean()
    defined = ~np.isnan(tau)
    tau[~defined] = tau[defined].mean() if defined.any() else DEFAULT_TAU
    return ClassThresholds(np.clip(tau, 0.0, 1.0))


def fit_thresholds(forest: Forest, features: np.ndarray, labels: Sequence[int]) -> ClassThresholds:
    classes, scores = forest.predict_batch(features)
    return thresholds_from_scores(classes, scores, np.asarray(labels), forest.n_classes)


def predict_accepted(forest: Forest, thresholds: ClassThresholds, feature_vector: np.ndarray):
    pred = predict(forest, feature_vector)
    return pred if pred.score >= thresholds.tau[pred.class_index] else DISCARDED


# ---------------------------------------------------------------- serialization
#
# Layout (all integers little-endian):
#   8 bytes  magic b"IOTDRFT\0"
#   u32      format version
#   u32      header length H
#   H bytes  UTF-8 JSON header (sorted keys): class_names, params, n_features,
#            thresholds (or null), and per tree {n_nodes, n_leaves}
#   per tree: feature i32[n], threshold f64[n], left i32[n], right i32[n],
#             leaf_slot i32[n], leaf_counts i32[n_leaves * n_classes] (row-major)


def dumps_model(forest: Forest, thresholds: ClassThresholds | None = None) -> bytes:
    header = {
        "class_names": list(forest.class_names),
        "n_features": forest.n_features,
        "params": asdict(forest.params),
        "thresholds": None if thresholds is None else [float(t) for t in thresholds.tau],
        "trees": [{"n_nodes": t.n_nodes, "n_leaves": len(t.leaf_counts)} for t in forest.trees],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MODEL_MAGIC, struct.pack("<II", MODEL_VERSION, len(head)), head]
    for t in forest.trees:
        parts += [
            t.feature.astype("<i4").tobytes(),
            t.threshold.astype("<f8").tobytes(),
            t.left.astype("<i4").tobytes(),
            t.right.astype("<i4").tobytes(),
            t.leaf_slot.astype("<i4").tobytes(),
            t.leaf_counts.astype("<i4").tobytes(),
        ]
    return b"".join(parts)


def loads_model(data: bytes) -> tuple[Forest, ClassThresholds | None]:
    if data[:8] != MODEL_MAGIC:
        raise ValueError("not a model file")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    k = len(header["class_names"])
    pos = 16 + hlen

    def take(dtype: str, count: int) -> np.ndarray:
        nonlocal pos
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
        pos += arr.nbytes
        return arr.astype(dtype[1:])

    trees = []
    for spec in header["trees"]:
        n = spec["n_nodes"]
        trees.append(DecisionTree(
            feature=take("<i4", n), threshold=take("<f8", n), left=take("<i4", n),
            right=take("<i4", n), leaf_slot=take("<i4", n),
            leaf_counts=take("<i4", spec["n_leaves"] * k).reshape(spec["n_leaves"], k),
        ))
    if pos != len(data):
        raise ValueError("trailing bytes in model file")
    forest = Forest(tuple(trees), tuple(header["class_names"]), ForestParams(**header["params"]), header["n_features"])
    tau = header["thresholds"]
    return forest, (None if tau is None else ClassThresholds(np.array(tau, dtype=np.float64)))


def save_model(path: str | Path, forest: Forest, thresholds: ClassThresholds | None = None) -> None:
    Path(path).write_bytes(dumps_model(forest, thresholds))


def load_model(path: str | Path) -> tuple[Forest, ClassThresholds | None]:
    return loads_model(Path(path).read_bytes())
