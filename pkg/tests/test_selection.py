import numpy as np
import pytest

from iotdrift.forest import ClassThresholds, DecisionTree, Forest, ForestParams
from iotdrift.registry import (
    GLOBAL_ID,
    ContextModel,
    ModelRegistry,
    ScoreDistribution,
    class_names_of,
    train_contextualized,
    train_global,
)
from iotdrift.selection import (
    Assignment,
    MissingLabels,
    NoData,
    ScoredStream,
    SelectionPolicy,
    assign_dynamic,
    assign_static,
    read_assignments,
    run_dynamic,
    run_static,
    select_by_distance,
    select_oracle,
    select_random,
    window_distance,
    write_assignments,
)

CLASSES = ("c0", "c1")


def _stub(model_id: str, train_scores=None) -> ContextModel:
    counts = np.array([[1, 0]], dtype=np.int32)
    tree = DecisionTree(np.array([-1], np.int32), np.zeros(1), np.array([-1], np.int32),
                        np.array([-1], np.int32), np.array([0], np.int32), counts)
    forest = Forest((tree,), CLASSES, ForestParams(n_trees=1), 28)
    dist = None if train_scores is None else ScoreDistribution(np.asarray(train_scores))
    return ContextModel(model_id, forest, ClassThresholds(np.zeros(2)), dist)


def _stream(days, truth, classes: dict, scores: dict | None = None) -> ScoredStream:
    days = np.asarray(days)
    n = len(days)
    scores = scores or {m: np.ones(n) for m in classes}
    return ScoredStream(
        days, {m: np.asarray(c) for m, c in classes.items()}, {m: np.asarray(s) for m, s in scores.items()},
        {m: np.ones(n, dtype=bool) for m in classes}, np.asarray(truth), np.array(["c"] * n, dtype=object),
    )


def _oracle_pick(stream, ids):
    reg = ModelRegistry.from_models([_stub(m) for m in ids])
    return assign_static(SelectionPolicy("oracle"), reg, stream, np.arange(len(stream)), [99], "H").model_ids[0]


def test_oracle_argmax():
    # 20 flows of class 0; hit rates 0.8, 0.9 and 0.85
    truth = np.zeros(20, dtype=int)
    preds = {}
    for mid, hits in (("m1", 16), ("m2", 18), (GLOBAL_ID, 17)):
        p = np.ones(20, dtype=int)
        p[:hits] = 0
        preds[mid] = p
    assert _oracle_pick(_stream(np.zeros(20), truth, preds), ["m1", "m2", GLOBAL_ID]) == "m2"


def test_oracle_tie_goes_to_registry_order():
    truth = np.zeros(4, dtype=int)
    p = np.array([0, 0, 1, 1])
    assert _oracle_pick(_stream(np.zeros(4), truth, {"m1": p, "m2": p}), ["m1", "m2"]) == "m1"


def test_oracle_single_candidate():
    assert _oracle_pick(_stream([0], [0], {"only": [1]}), ["only"]) == "only"


def test_oracle_needs_labels():
    stream = _stream([0], [0], {"a": [0]})
    stream.truth = None
    reg = ModelRegistry.from_models([_stub("a")])
    with pytest.raises(MissingLabels):
        assign_static(SelectionPolicy("oracle"), reg, stream, np.arange(1), [1], "H")


def test_distance_picks_closest():
    k = np.arange(100)
    ids = ["m3", "m8"]
    reg = ModelRegistry.from_models([_stub(m, k / 200) for m in ids])
    # window scores shifted by 4 and 13 grid steps give KS 0.04 and 0.13
    window = {"m3": (k + 4) / 200, "m8": (k + 13) / 200}
    stream = _stream(np.zeros(100), np.zeros(100, int), {m: np.zeros(100, int) for m in ids}, window)
    a = assign_static(SelectionPolicy("distance", "ks"), reg, stream, np.arange(100), [1], "H7")
    assert a.model_ids == ["m3"]
    assert a.values[0] == pytest.approx(0.04)


def test_distance_identical_data_is_zero():
    s = np.linspace(0.3, 1, 20)
    d, used = window_distance("kr", ScoreDistribution(s), s)
    assert d == 0 and used == "kr"


def test_distance_tie_goes_first():
    s = np.linspace(0.3, 1, 20)
    reg = ModelRegistry.from_models([_stub("a", s), _stub("b", s)])
    stream = _stream(np.zeros(20), np.zeros(20, int), {"a": np.zeros(20, int), "b": np.zeros(20, int)},
                     {"a": s[::-1], "b": s})
    assert assign_static(SelectionPolicy("distance", "js"), reg, stream, np.arange(20), [1], "H").model_ids == ["a"]


def test_es_falls_back_to_ks_on_small_windows():
    train = ScoreDistribution(np.linspace(0, 1, 30))
    assert window_distance("es", train, np.array([0.1, 0.2, 0.3]))[1] == "ks"
    assert window_distance("es", train, np.linspace(0, 1, 6) ** 2)[1] == "es"


def test_random_uniform_and_reproducible():
    ids = [f"m{i}" for i in range(6)]
    draws = [select_random(ids, 17, i) for i in range(6000)]
    counts = [draws.count(m) for m in ids]
    assert all(abs(c - 1000) <= 120 for c in counts)
    assert select_random(ids, 17, 5) == select_random(ids, 17, 5)
    assert select_random(["x"], 3, 9) == "x"


def test_random_dynamic_draws_per_day():
    reg = ModelRegistry.from_models([_stub(m) for m in "abcdef"])
    stream = _stream(np.arange(40), np.zeros(40, int), {m: np.zeros(40, int) for m in "abcdef"})
    a = assign_dynamic(SelectionPolicy("random", regime="dynamic", seed=3), reg, stream, range(40), "H")
    assert len(set(a.model_ids)) > 1
    b = assign_dynamic(SelectionPolicy("random", regime="dynamic", seed=3), reg, stream, range(40), "H")
    assert a.model_ids == b.model_ids


def test_static_empty_window_falls_back_to_global():
    reg = ModelRegistry.from_models([_stub("a", [0.5]), _stub(GLOBAL_ID, [0.5])])
    stream = _stream([], np.zeros(0, int), {"a": [], GLOBAL_ID: []})
    a = assign_static(SelectionPolicy("distance"), reg, stream, np.arange(0), [5, 6], "H")
    assert a.model_ids == [GLOBAL_ID, GLOBAL_ID] and a.metrics == ["fallback", "fallback"]


def _switching_stream():
    # one class-0 flow per day 1..10; A is right up to day 5, B afterwards
    days = np.arange(1, 11)
    a = np.where(days <= 5, 0, 1)
    return _stream(days, np.zeros(10, int), {"A": a, "B": 1 - a})


def test_dynamic_window_is_half_open():
    reg = ModelRegistry.from_models([_stub("A"), _stub("B")])
    a = assign_dynamic(SelectionPolicy("oracle", regime="dynamic", window_days=2), reg,
                       _switching_stream(), [5, 6, 7], "H")
    # day 6 sees days {5, 6}: a tie kept by order -> A; day 7 sees {6, 7} -> B
    assert a.model_ids == ["A", "A", "B"]


def test_dynamic_inactive_day_keeps_previous():
    reg = ModelRegistry.from_models([_stub("A"), _stub("B"), _stub(GLOBAL_ID)])
    stream = _switching_stream()
    stream.classes[GLOBAL_ID] = np.ones(10, int)
    stream.accepted[GLOBAL_ID] = np.ones(10, bool)
    stream.scores[GLOBAL_ID] = np.ones(10)
    a = assign_dynamic(SelectionPolicy("oracle", regime="dynamic", window_days=1), reg, stream, [0, 7, 12], "H")
    assert a.model_ids == [GLOBAL_ID, "B", "B"]
    assert a.metrics == ["fallback", "accuracy", "inactive"]


def test_policy_validation():
    with pytest.raises(ValueError):
        SelectionPolicy("distance", metric="l2")
    with pytest.raises(ValueError):
        SelectionPolicy(regime="dynamic", window_days=0)
    assert SelectionPolicy("distance", "es", regime="dynamic").name == "es/ctx+global/dynamic"


# ---------------------------------------------------------------- trained models


@pytest.fixture(scope="module")
def trained(small_tables):
    seen = {h: small_tables[h].days(hi=8) for h in ("H01", "H02", "H03")}
    names = class_names_of(seen.values())
    p = ForestParams(n_trees=15, seed=8)
    return ModelRegistry.from_models(train_contextualized(seen, p, names) + [train_global(seen, p, names)])


def test_select_oracle_and_distance_functions(trained, small_tables):
    window = small_tables["H04"].days(hi=8)
    cands = [trained[m] for m in trained.order]
    mid, acc = select_oracle(cands, window)
    assert mid in trained.order and 0 <= acc <= 1
    mid2, d = select_by_distance(cands, window.features, "ks")
    assert mid2 in trained.order and d >= 0
    with pytest.raises(NoData):
        select_by_distance(cands, window.features[:0], "ks")


@pytest.mark.parametrize("mode", ["distance", "random"])
def test_distance_and_random_ignore_labels(trained, small_tables, mode):
    table = small_tables["H04"]
    scrambled = table.take(np.arange(len(table)))
    scrambled.labels = np.roll(scrambled.labels, 3)
    policy = SelectionPolicy(mode, "kr", regime="dynamic", window_days=4)
    a = run_dynamic(policy, trained, table, range(8, 12), "H04")
    b = run_dynamic(policy, trained, scrambled, range(8, 12), "H04")
    assert a.model_ids == b.model_ids and a.values == b.values


def test_oracle_on_unlabeled_raises(trained, small_tables):
    with pytest.raises(MissingLabels):
        run_static(SelectionPolicy("oracle"), trained, small_tables["H04"].unlabeled(), [8], "H04")


@pytest.mark.parametrize("candidates", ["ctx", "ctx+global", "global"])
def test_chosen_ids_in_candidate_set(trained, small_tables, candidates):
    allowed = set(trained.candidates(candidates))
    for regime in ("static", "dynamic"):
        policy = SelectionPolicy("distance", "es", candidates, regime, 3)
        table = small_tables["H04"]
        runner = run_static if regime == "static" else run_dynamic
        data = table.days(hi=8) if regime == "static" else table
        a = runner(policy, trained, data, range(8, 12), "H04")
        assert set(a.model_ids) <= allowed
        if regime == "static":
            assert len(set(a.model_ids)) == 1


def test_dynamic_stationary_stabilises(trained, small_tables):
    # window longer than the stream: every day after the first sees a growing prefix
    a = run_dynamic(SelectionPolicy("oracle", regime="dynamic", window_days=100), trained,
                    small_tables["H01"], range(8, 12), "H01")
    assert len(set(a.model_ids[1:])) == 1


def test_assignment_file_round_trip(tmp_path):
    a = Assignment("H1")
    a.append(3, "m1", "ks", 0.25)
    a.append(4, "m1", "inactive", None)
    b = Assignment("H2")
    b.append(3, GLOBAL_ID, "fallback", None)
    path = tmp_path / "assignment.csv"
    write_assignments(path, [a, b])
    assert path.read_text().splitlines()[0] == "home_id,epoch_day,model_id,metric,distance_or_accuracy"
    back = read_assignments(path)
    assert [x.__dict__ for x in back] == [a.__dict__, b.__dict__]
