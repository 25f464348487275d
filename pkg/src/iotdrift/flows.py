"""Flow records, the 28 classifier features, and the flow CSV format.

A flow CSV has the header::

    home_id,epoch_day,src,dst,sport,dport,proto,fwd_<field>...,rev_<field>...[,label]

with the 11 per-direction fields listed in :data:`ACTIVITY_FIELDS`, forward
block first. ``sport``/``dport`` are empty for protocols other than TCP and
UDP. The trailing ``label`` column is optional; an empty cell means the label
is absent. Any other column layout is rejected.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

TCP = 6
UDP = 17

ACTIVITY_FIELDS = (
    "packet_total_count",
    "octet_total_count",
    "small_packet_count",
    "large_packet_count",
    "non_empty_packet_count",
    "data_byte_count",
    "average_interarrival_time",
    "first_non_empty_packet_size",
    "max_packet_size",
    "std_payload_length",
    "std_interarrival_time",
)
FLOAT_FIELDS = frozenset(
    {"average_interarrival_time", "std_payload_length", "std_interarrival_time"}
)
SERVICE_FIELDS = ("is_http", "is_tls", "is_dns", "is_ntp", "is_other_tcp", "is_other_udp")

ACTIVITY_COLUMNS = tuple(f"fwd_{f}" for f in ACTIVITY_FIELDS) + tuple(
    f"rev_{f}" for f in ACTIVITY_FIELDS
)
FEATURE_NAMES = ACTIVITY_COLUMNS + SERVICE_FIELDS
N_FEATURES = len(FEATURE_NAMES)
ID_COLUMNS = ("home_id", "epoch_day", "src", "dst", "sport", "dport", "proto")
FLOW_COLUMNS = ID_COLUMNS + ACTIVITY_COLUMNS
LABEL_COLUMN = "label"

HTTP_PORTS = frozenset({80, 8080, 8008, 8888})
TLS_PORTS = frozenset({443, 1443, 8443, 55443})
DNS_PORTS = frozenset({53, 5353})
NTP_PORTS = frozenset({123})

SMALL_PAYLOAD = 60
LARGE_PAYLOAD = 220
STATS_PREFIX = 10

_INT_COLUMN_MASK = np.array(
    [f not in FLOAT_FIELDS for f in ACTIVITY_FIELDS] * 2, dtype=bool
)


class FlowError(ValueError):
    """Base class for malformed flow input."""


class ParseError(FlowError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(FlowError):
    pass


class InvariantViolation(FlowError):
    pass


def _pstd(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    mean = math.fsum(values) / len(values)
    return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / len(values))


@dataclass(frozen=True)
class DirectionStats:
    packet_total_count: int = 0
    octet_total_count: int = 0
    small_packet_count: int = 0
    large_packet_count: int = 0
    non_empty_packet_count: int = 0
    data_byte_count: int = 0
    average_interarrival_time: float = 0.0
    first_non_empty_packet_size: int = 0
    max_packet_size: int = 0
    std_payload_length: float = 0.0
    std_interarrival_time: float = 0.0

    @classmethod
    def from_packets(
        cls,
        payloads: Sequence[int],
        times_ms: Sequence[float],
        header_bytes: int = 0,
    ) -> "DirectionStats":
        """Aggregate one direction of a flow from its packets.

        ``payloads`` are payload sizes in bytes and ``times_ms`` the arrival
        times in milliseconds, both in arrival order. ``header_bytes`` is added
        per packet to obtain the octet total.
        """
        if len(payloads) != len(times_ms):
            raise ValueError("payloads and times_ms differ in length")
        n = len(payloads)
        non_empty = [p for p in payloads if p > 0]
        gaps = [b - a for a, b in zip(times_ms, times_ms[1:])]
        head_gaps = [b - a for a, b in zip(times_ms[:STATS_PREFIX], times_ms[1:STATS_PREFIX])]
        return cls(
            packet_total_count=n,
            octet_total_count=int(sum(payloads)) + header_bytes * n,
            small_packet_count=sum(1 for p in payloads if p < SMALL_PAYLOAD),
            large_packet_count=sum(1 for p in payloads if p >= LARGE_PAYLOAD),
            non_empty_packet_count=len(non_empty),
            data_byte_count=int(sum(non_empty)),
            average_interarrival_time=math.fsum(gaps) / len(gaps) if gaps else 0.0,
            first_non_empty_packet_size=non_empty[0] if non_empty else 0,
            max_packet_size=max(payloads) if n else 0,
            std_payload_length=_pstd(non_empty[:STATS_PREFIX]),
            std_interarrival_time=_pstd(head_gaps),
        )

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, f) for f in ACTIVITY_FIELDS)

    def validate(self) -> None:
        values = self.as_tuple()
        if any(v < 0 for v in values) or any(
            isinstance(v, float) and not math.isfinite(v) for v in values
        ):
            raise InvariantViolation("negative or non-finite measurement")
        total = self.packet_total_count
        if self.small_packet_count + self.large_packet_count > total:
            raise InvariantViolation("small + large packet counts exceed packet total")
        if self.non_empty_packet_count > total:
            raise InvariantViolation("non-empty packet count exceeds packet total")
        if (
            self.non_empty_packet_count >= 1
            and self.data_byte_count < self.first_non_empty_packet_size
        ):
            raise InvariantViolation("data byte count below first non-empty packet size")


@dataclass(frozen=True)
class FlowRecord:
    home_id: str
    epoch_day: int
    src: str
    dst: str
    sport: int | None
    dport: int | None
    proto: int
    fwd: DirectionStats
    rev: DirectionStats
    label: str | None = None

    def validate(self) -> None:
        if self.epoch_day < 0:
            raise InvariantViolation("epoch_day must be non-negative")
        if not 1 <= self.proto <= 255:
            raise InvariantViolation(f"protocol number {self.proto} outside 1..255")
        has_ports = self.proto in (TCP, UDP)
        if has_ports and (self.sport is None or self.dport is None):
            raise InvariantViolation("TCP/UDP flow without ports")
        if not has_ports and (self.sport is not None or self.dport is not None):
            raise InvariantViolation(f"ports given for protocol {self.proto}")
        self.fwd.validate()
        self.rev.validate()


def classify_service(proto: int, dport: int | None) -> tuple[int, int, int, int, int, int]:
    """One-hot service bits ``(http, tls, dns, ntp, other_tcp, other_udp)``."""
    if proto == TCP:
        if dport in HTTP_PORTS:
            return (1, 0, 0, 0, 0, 0)
        if dport in TLS_PORTS:
            return (0, 1, 0, 0, 0, 0)
        return (0, 0, 0, 0, 1, 0)
    if proto == UDP:
        if dport in DNS_PORTS:
            return (0, 0, 1, 0, 0, 0)
        if dport in NTP_PORTS:
            return (0, 0, 0, 1, 0, 0)
        return (0, 0, 0, 0, 0, 1)
    return (0, 0, 0, 0, 0, 0)


def service_matrix(proto: np.ndarray, dport: np.ndarray) -> np.ndarray:
    """Vectorised :func:`classify_service`; ``dport`` uses -1 for absent."""
    proto = np.asarray(proto)
    dport = np.asarray(dport)
    tcp = proto == TCP
    udp = proto == UDP
    http = tcp & np.isin(dport, list(HTTP_PORTS))
    tls = tcp & np.isin(dport, list(TLS_PORTS))
    dns = udp & np.isin(dport, list(DNS_PORTS))
    ntp = udp & np.isin(dport, list(NTP_PORTS))
    other_tcp = tcp & ~http & ~tls
    other_udp = udp & ~dns & ~ntp
    return np.column_stack([http, tls, dns, ntp, other_tcp, other_udp]).astype(np.float64)


def extract_features(record: FlowRecord) -> np.ndarray:
    """The 28-dimensional feature vector of one flow (read-only array)."""
    record.validate()
    vec = np.array(
        record.fwd.as_tuple() + record.rev.as_tuple() + classify_service(record.proto, record.dport),
        dtype=np.float64,
    )
    vec.flags.writeable = False
    return vec


# ---------------------------------------------------------------- CSV I/O


def _check_header(header: list[str] | None, path: object) -> bool:
    """Validate the header; return whether a label column is present."""
    if header is None:
        raise SchemaError(f"{path}: empty file")
    expected = list(FLOW_COLUMNS)
    if header == expected:
        return False
    if header == expected + [LABEL_COLUMN]:
        return True
    if header[: len(expected)] != expected:
        raise SchemaError(f"{path}: header does not match the flow column contract")
    extra = header[len(expected) :]
    raise SchemaError(f"{path}: unexpected columns {extra}")


def _parse_port(text: str, line: int, name: str) -> int | None:
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        raise ParseError(line, f"{name}: not an integer: {text!r}") from None


def _parse_row(row: list[str], line: int, has_label: bool) -> FlowRecord:
    width = len(FLOW_COLUMNS) + has_label
    if len(row) != width:
        raise ParseError(line, f"expected {width} fields, got {len(row)}")
    try:
        epoch_day = int(row[1])
    except ValueError:
        raise ParseError(line, f"epoch_day: not an integer: {row[1]!r}") from None
    try:
        proto = int(row[6])
    except ValueError:
        raise ParseError(line, f"proto: not an integer: {row[6]!r}") from None
    values = []
    for name, text in zip(ACTIVITY_COLUMNS, row[7:29]):
        try:
            values.append(float(text) if name[4:] in FLOAT_FIELDS else int(text))
        except ValueError:
            raise ParseError(line, f"{name}: malformed number {text!r}") from None
    label = row[29] if has_label and row[29] != "" else None
    record = FlowRecord(
        home_id=row[0],
        epoch_day=epoch_day,
        src=row[2],
        dst=row[3],
        sport=_parse_port(row[4], line, "sport"),
        dport=_parse_port(row[5], line, "dport"),
        proto=proto,
        fwd=DirectionStats(*values[:11]),
        rev=DirectionStats(*values[11:]),
        label=label,
    )
    try:
        record.validate()
    except InvariantViolation as exc:
        raise ParseError(line, str(exc)) from exc
    return record


def read_flow_csv(path: str | Path) -> Iterator[FlowRecord]:
    """Stream the records of a flow CSV in file order."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        has_label = _check_header(next(reader, None), path)
        for line, row in enumerate(reader, start=2):
            yield _parse_row(row, line, has_label)


def _fmt(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_flow_csv(path: str | Path, records: Iterable[FlowRecord], with_label: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FLOW_COLUMNS + ((LABEL_COLUMN,) if with_label else ()))
        for r in records:
            row = [r.home_id, r.epoch_day, r.src, r.dst, _fmt(r.sport), _fmt(r.dport), r.proto]
            row += [_fmt(v) for v in r.fwd.as_tuple() + r.rev.as_tuple()]
            if with_label:
                row.append(_fmt(r.label))
            writer.writerow(row)


# ---------------------------------------------------------------- columnar table


@dataclass
class FlowTable:
    """Columnar view of many flows; the form used for training and scoring.

    ``labels`` is an object array holding ``None`` for absent labels.
    """

    home_id: np.ndarray
    epoch_day: np.ndarray
    proto: np.ndarray
    dport: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.epoch_day)

    @property
    def has_labels(self) -> bool:
        return len(self) > 0 and all(lab is not None for lab in self.labels)

    def take(self, index: np.ndarray) -> "FlowTable":
        return FlowTable(**{f.name: getattr(self, f.name)[index] for f in fields(self)})

    def days(self, lo: int | None = None, hi: int | None = None) -> "FlowTable":
        """Rows with ``lo <= epoch_day < hi``."""
        mask = np.ones(len(self), dtype=bool)
        if lo is not None:
            mask &= self.epoch_day >= lo
        if hi is not None:
            mask &= self.epoch_day < hi
        return self.take(np.flatnonzero(mask))

    def unlabeled(self) -> "FlowTable":
        return FlowTable(
            self.home_id, self.epoch_day, self.proto, self.dport, self.features,
            np.full(len(self), None, dtype=object),
        )

    @classmethod
    def empty(cls) -> "FlowTable":
        return cls(
            np.empty(0, dtype=object), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64), np.empty((0, N_FEATURES)), np.empty(0, dtype=object),
        )

    @classmethod
    def concat(cls, tables: Sequence["FlowTable"]) -> "FlowTable":
        if not tables:
            return cls.empty()
        return cls(**{
            f.name: np.concatenate([getattr(t, f.name) for t in tables]) for f in fields(cls)
        })

    @classmethod
    def from_records(cls, records: Iterable[FlowRecord]) -> "FlowTable":
        records = list(records)
        if not records:
            return cls.empty()
        return cls(
            home_id=np.array([r.home_id for r in records], dtype=object),
            epoch_day=np.array([r.epoch_day for r in records], dtype=np.int64),
            proto=np.array([r.proto for r in records], dtype=np.int64),
            dport=np.array([-1 if r.dport is None else r.dport for r in records], dtype=np.int64),
            features=np.vstack([extract_features(r) for r in records]),
            labels=np.array([r.label for r in records], dtype=object),
        )


def _column_to_array(values: Sequence[str], dtype, name: str, first_line: int) -> np.ndarray:
    try:
        return np.array(values, dtype=dtype)
    except ValueError:
        for offset, text in enumerate(values):
            try:
                dtype(text) if dtype is not np.int64 else int(text)
            except ValueError:
                raise ParseError(first_line + offset, f"{name}: malformed number {text!r}") from None
        raise


def _vector_invariants(chunk: "FlowTable", act: np.ndarray, sport: np.ndarray, first_line: int) -> None:
    bad = np.zeros(len(chunk), dtype=bool)
    bad |= chunk.epoch_day < 0
    bad |= (chunk.proto < 1) | (chunk.proto > 255)
    has_ports = (chunk.proto == TCP) | (chunk.proto == UDP)
    port_given = (sport >= 0) & (chunk.dport >= 0)
    port_any = (sport >= 0) | (chunk.dport >= 0)
    bad |= has_ports & ~port_given
    bad |= ~has_ports & port_any
    bad |= ~np.isfinite(act).all(axis=1) | (act < 0).any(axis=1)
    for base in (0, 11):
        total, small, large, non_empty, data, first = (
            act[:, base + i] for i in (0, 2, 3, 4, 5, 7)
        )
        bad |= small + large > total
        bad |= non_empty > total
        bad |= (non_empty >= 1) & (data < first)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        record = _record_from_columns(chunk, act, sport, i)
        try:
            record.validate()
        except InvariantViolation as exc:
            raise ParseError(first_line + i, str(exc)) from exc
        raise ParseError(first_line + i, "flow invariant violated")


def _record_from_columns(chunk: "FlowTable", act: np.ndarray, sport: np.ndarray, i: int) -> FlowRecord:
    vals = [
        float(v) if name[4:] in FLOAT_FIELDS else int(v) for name, v in zip(ACTIVITY_COLUMNS, act[i])
    ]
    return FlowRecord(
        home_id=chunk.home_id[i], epoch_day=int(chunk.epoch_day[i]), src="", dst="",
        sport=None if sport[i] < 0 else int(sport[i]),
        dport=None if chunk.dport[i] < 0 else int(chunk.dport[i]),
        proto=int(chunk.proto[i]),
        fwd=DirectionStats(*vals[:11]), rev=DirectionStats(*vals[11:]), label=chunk.labels[i],
    )


def _chunk_to_table(rows: list[list[str]], first_line: int, has_label: bool) -> FlowTable:
    width = len(FLOW_COLUMNS) + has_label
    for offset, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(first_line + offset, f"expected {width} fields, got {len(row)}")
    cols = list(zip(*rows))
    ports = []
    for j, name in ((4, "sport"), (5, "dport")):
        ports.append(_column_to_array(["-1" if v == "" else v for v in cols[j]], np.int64, name, first_line))
    act = np.empty((len(rows), 22), dtype=np.float64)
    for k, name in enumerate(ACTIVITY_COLUMNS):
        if _INT_COLUMN_MASK[k]:
            act[:, k] = _column_to_array(cols[7 + k], np.int64, name, first_line)
        else:
            act[:, k] = _column_to_array(cols[7 + k], np.float64, name, first_line)
    proto = _column_to_array(cols[6], np.int64, "proto", first_line)
    labels = np.array(cols[29] if has_label else [None] * len(rows), dtype=object)
    if has_label:
        labels[labels == ""] = None
    chunk = FlowTable(
        home_id=np.array(cols[0], dtype=object),
        epoch_day=_column_to_array(cols[1], np.int64, "epoch_day", first_line),
        proto=proto,
        dport=ports[1],
        features=np.empty((0, N_FEATURES)),
        labels=labels,
    )
    _vector_invariants(chunk, act, ports[0], first_line)
    chunk.features = np.hstack([act, service_matrix(proto, ports[1])])
    return chunk


def load_flow_table(path: str | Path, chunk_rows: int = 100_000) -> FlowTable:
    """Parse a flow CSV straight into columns.

    Applies the same schema, parse and invariant checks as
    :func:`read_flow_csv`, reporting the first offending line.
    """
    chunks = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        has_label = _check_header(next(reader, None), path)
        line = 2
        while True:
            rows = [row for _, row in zip(range(chunk_rows), reader)]
            if not rows:
                break
            chunks.append(_chunk_to_table(rows, line, has_label))
            line += len(rows)
    return FlowTable.concat(chunks)


def write_feature_csv(path: str | Path, features: np.ndarray, labels: Sequence[str | None] | None = None) -> None:
    """Write feature vectors with a header of the 28 feature names."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != N_FEATURES:
        raise SchemaError(f"expected {N_FEATURES} features, got {features.shape[1]}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FEATURE_NAMES + ((LABEL_COLUMN,) if labels is not None else ()))
    for i, row in enumerate(features):
        out = [repr(float(v)) if not float(v).is_integer() else str(int(v)) for v in row]
        if labels is not None:
            out.append(_fmt(labels[i]))
        writer.writerow(out)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_feature_csv(path: str | Path) -> tuple[np.ndarray, list[str | None] | None]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header == list(FEATURE_NAMES):
            has_label = False
        elif header == list(FEATURE_NAMES) + [LABEL_COLUMN]:
            has_label = True
        else:
            raise SchemaError(f"{path}: feature header mismatch")
        rows, labels = [], []
        for line, row in enumerate(reader, start=2):
            if len(row) != N_FEATURES + has_label:
                raise ParseError(line, "wrong number of fields")
            try:
                rows.append([float(v) for v in row[:N_FEATURES]])
            except ValueError:
                raise ParseError(line, "malformed number") from None
            if has_label:
                labels.append(row[N_FEATURES] or None)
    return np.array(rows, dtype=np.float64).reshape(-1, N_FEATURES), (labels if has_label else None)
