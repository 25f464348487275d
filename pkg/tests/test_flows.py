import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotdrift.flows import (
    ACTIVITY_COLUMNS,
    FEATURE_NAMES,
    FLOW_COLUMNS,
    DirectionStats,
    FlowRecord,
    FlowTable,
    InvariantViolation,
    ParseError,
    SchemaError,
    classify_service,
    extract_features,
    load_flow_table,
    read_feature_csv,
    read_flow_csv,
    service_matrix,
    write_feature_csv,
    write_flow_csv,
)


def _record(proto=6, sport=50000, dport=443, fwd=None, rev=None, label="cam", day=0):
    return FlowRecord("H01", day, "10.0.0.2", "203.0.113.9", sport, dport, proto,
                      fwd or DirectionStats(), rev or DirectionStats(), label)


def test_layout():
    assert len(FEATURE_NAMES) == 28
    assert FEATURE_NAMES[0] == "fwd_packet_total_count"
    assert FEATURE_NAMES[11] == "rev_packet_total_count"
    assert FEATURE_NAMES[22:] == ("is_http", "is_tls", "is_dns", "is_ntp", "is_other_tcp", "is_other_udp")


@pytest.mark.parametrize("proto,port,expected", [
    (6, 8443, (0, 1, 0, 0, 0, 0)),
    (6, 443, (0, 1, 0, 0, 0, 0)),
    (6, 8888, (1, 0, 0, 0, 0, 0)),
    (6, 53, (0, 0, 0, 0, 1, 0)),
    (17, 5353, (0, 0, 1, 0, 0, 0)),
    (17, 123, (0, 0, 0, 1, 0, 0)),
    (17, 443, (0, 0, 0, 0, 0, 1)),
    (1, None, (0, 0, 0, 0, 0, 0)),
    (47, None, (0, 0, 0, 0, 0, 0)),
])
def test_classify_service(proto, port, expected):
    assert classify_service(proto, port) == expected


@settings(max_examples=200)
@given(proto=st.integers(1, 255), port=st.integers(0, 65535))
def test_service_bits_one_hot_iff_tcp_udp(proto, port):
    bits = classify_service(proto, port)
    assert sum(bits) == (1 if proto in (6, 17) else 0)
    assert service_matrix(np.array([proto]), np.array([port]))[0].tolist() == list(bits)


def test_three_packet_flow():
    s = DirectionStats.from_packets([0, 100, 300], [0, 10, 30])
    assert s.packet_total_count == 3
    assert s.small_packet_count == 1
    assert s.large_packet_count == 1
    assert s.non_empty_packet_count == 2
    assert s.data_byte_count == 400
    assert s.average_interarrival_time == 15
    assert s.first_non_empty_packet_size == 100
    assert s.max_packet_size == 300
    assert s.std_payload_length == 100
    assert s.std_interarrival_time == 5


def test_stats_use_first_ten_only():
    payloads = [100] * 10 + [5000]
    s = DirectionStats.from_packets(payloads, list(range(0, 110, 10)))
    assert s.std_payload_length == 0.0
    assert s.std_interarrival_time == 0.0
    assert s.max_packet_size == 5000


def test_empty_flow_is_all_zero():
    vec = extract_features(_record())
    assert np.all(vec[:22] == 0)
    assert vec[22:].tolist() == [0, 1, 0, 0, 0, 0]
    assert not vec.flags.writeable


def test_symmetric_flow():
    s = DirectionStats.from_packets([40, 500, 80], [0, 3, 9])
    vec = extract_features(_record(fwd=s, rev=s))
    assert np.array_equal(vec[:11], vec[11:22])


@pytest.mark.parametrize("kwargs", [
    {"small_packet_count": 2, "large_packet_count": 2, "packet_total_count": 3},
    {"non_empty_packet_count": 4, "packet_total_count": 3},
    {"packet_total_count": 1, "non_empty_packet_count": 1, "data_byte_count": 5, "first_non_empty_packet_size": 9},
    {"octet_total_count": -1},
])
def test_direction_invariants(kwargs):
    with pytest.raises(InvariantViolation):
        extract_features(_record(fwd=DirectionStats(**kwargs)))


@pytest.mark.parametrize("proto,sport,dport", [(6, None, 80), (1, 1, 2), (0, None, None), (256, None, None)])
def test_record_invariants(proto, sport, dport):
    with pytest.raises(InvariantViolation):
        _record(proto=proto, sport=sport, dport=dport).validate()


def test_csv_round_trip(tmp_path):
    recs = [
        _record(fwd=DirectionStats.from_packets([0, 100, 300], [0, 10, 30.5])),
        _record(proto=1, sport=None, dport=None, label=None, day=3),
    ]
    path = tmp_path / "h.csv"
    write_flow_csv(path, recs)
    back = list(read_flow_csv(path))
    assert back == recs
    table = load_flow_table(path)
    assert np.array_equal(table.features, FlowTable.from_records(recs).features)
    assert table.labels.tolist() == ["cam", None]


def test_csv_without_label_column(tmp_path):
    path = tmp_path / "h.csv"
    write_flow_csv(path, [_record()], with_label=False)
    assert [r.label for r in read_flow_csv(path)] == [None]
    assert not load_flow_table(path).has_labels


def test_bad_number_reports_line(tmp_path):
    path = tmp_path / "h.csv"
    write_flow_csv(path, [_record(), _record()])
    lines = path.read_text().splitlines()
    cells = lines[2].split(",")
    cells[FLOW_COLUMNS.index("fwd_packet_total_count")] = "x"
    lines[2] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as err:
        list(read_flow_csv(path))
    assert err.value.line == 3
    with pytest.raises(ParseError) as err:
        load_flow_table(path)
    assert err.value.line == 3


def test_invariant_violation_in_file(tmp_path):
    path = tmp_path / "h.csv"
    write_flow_csv(path, [_record(fwd=DirectionStats(small_packet_count=3, packet_total_count=1))], with_label=True)
    with pytest.raises(ParseError) as err:
        load_flow_table(path)
    assert err.value.line == 2
    assert isinstance(err.value.__cause__, InvariantViolation)


def test_extra_column_is_schema_error(tmp_path):
    path = tmp_path / "h.csv"
    write_flow_csv(path, [_record()])
    lines = path.read_text().splitlines()
    lines = [lines[0] + ",extra"] + [line + ",1" for line in lines[1:]]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError):
        list(read_flow_csv(path))
    with pytest.raises(SchemaError):
        load_flow_table(path)


def test_feature_csv_round_trip(tmp_path, rng):
    X = np.hstack([rng.integers(0, 1000, size=(5, 22)).astype(float), np.eye(6)[rng.integers(0, 6, 5)]])
    X[:, [6, 9, 10]] = rng.random((5, 3)) * 1e3
    path = tmp_path / "f.csv"
    write_feature_csv(path, X, ["a", "b", None, "c", "d"])
    Y, labels = read_feature_csv(path)
    assert np.array_equal(X, Y)
    assert labels == ["a", "b", None, "c", "d"]


def test_table_slicing():
    recs = [_record(day=d, label=str(d)) for d in (0, 1, 2, 2, 5)]
    t = FlowTable.from_records(recs)
    assert len(t.days(1, 3)) == 3
    assert t.days(lo=5).labels.tolist() == ["5"]
    assert len(FlowTable.concat([t, t])) == 10
    assert len(FlowTable.empty()) == 0
    assert ACTIVITY_COLUMNS[0] == "fwd_packet_total_count"
