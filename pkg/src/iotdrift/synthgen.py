"""Labeled multi-home flow datasets with controllable spatial and temporal drift.

Each device class has a centroid in a 22-dimensional latent space (one entry
per activity column, on a log1p scale). Home ``h`` belongs to context
``h % n_contexts``. Every context pairs each class ``k`` with a partner class
``p_c(k)`` (a random permutation per context) and shifts class ``k`` by
``context_offset_scale * (centroid[p_c(k)] - centroid[k])``; its service mix
moves the same fraction (capped at 1) toward the partner's. A scale of 0
makes all homes alike and 1 relabels classes across contexts.

From ``drift_day`` onward the drifting homes move by ``drift_delta``: the
shift becomes ``own + drift_delta * (target - own)`` when ``drift_target``
names a context, and otherwise gains ``drift_delta`` times the gap to a
second random partner. A flow's latent vector is its shifted centroid plus
``N(0, noise_sigma**2)`` noise, mapped back with ``expm1``.

Latent values are turned into valid per-direction statistics by repairing in
a fixed order: round counts and sizes, clip them to the packet total, then
cap ``large`` at ``total - small`` and zero payload fields of flows without
non-empty packets.

Randomness: ``SeedSequence(seed)`` spawns one PCG64 stream for the class and
context parameters and one per home (spawn order = home index), so a home's
flows do not depend on how many other homes are generated.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .flows import (
    ACTIVITY_FIELDS,
    DNS_PORTS,
    FLOAT_FIELDS,
    FLOW_COLUMNS,
    HTTP_PORTS,
    LABEL_COLUMN,
    NTP_PORTS,
    TCP,
    TLS_PORTS,
    UDP,
    FlowTable,
    service_matrix,
)

N_ACTIVITY = 2 * len(ACTIVITY_FIELDS)
# service categories: http, tls, dns, ntp, other tcp, other udp, non-TCP/UDP
_N_SERVICES = 7
_LATENT_LO, _LATENT_HI = 1.0, 7.0


@dataclass(frozen=True)
class DriftSpec:
    n_homes: int = 12
    n_classes: int = 8
    days: int = 47
    flows_per_class_per_day: float = 20.0
    context_offset_scale: float = 0.0
    drift_day: int | None = None  # None: no drift (= days)
    drift_delta: float = 0.0
    noise_sigma: float = 0.6
    seed: int = 0
    n_contexts: int | None = None
    drift_target: int | None = None
    drift_homes: tuple[int, ...] | None = None

    def __post_init__(self):
        for name in ("n_homes", "n_classes", "days"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.flows_per_class_per_day > 0:
            raise ValueError("flows_per_class_per_day must be positive")
        if self.drift_day is None:
            object.__setattr__(self, "drift_day", self.days)
        if not 0 <= self.drift_day <= self.days:
            raise ValueError("drift_day must lie in [0, days]")
        if self.noise_sigma < 0 or self.context_offset_scale < 0:
            raise ValueError("noise_sigma and context_offset_scale must be non-negative")
        if self.n_contexts is not None and self.n_contexts < 1:
            raise ValueError("n_contexts must be >= 1")
        if self.drift_target is not None and not 0 <= self.drift_target < self.contexts:
            raise ValueError("drift_target must name a context")
        if self.drift_homes is not None:
            object.__setattr__(self, "drift_homes", tuple(int(h) for h in self.drift_homes))

    @property
    def contexts(self) -> int:
        return self.n_contexts if self.n_contexts is not None else self.n_homes

    def context_of(self, home: int) -> int:
        return home % self.contexts

    def home_ids(self) -> list[str]:
        return [home_name(h) for h in range(self.n_homes)]

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["drift_homes"] is not None:
            d["drift_homes"] = list(d["drift_homes"])
        return d


def home_name(index: int) -> str:
    return f"H{index + 1:02d}"


def class_name(index: int) -> str:
    return f"dev{index:02d}"


def load_spec(path: str | Path) -> DriftSpec:
    """Read a spec from a JSON or YAML key-value file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    known = {f.name for f in fields(DriftSpec)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown spec keys: {sorted(unknown)}")
    return DriftSpec(**data)


@dataclass(frozen=True)
class _World:
    centroids: np.ndarray  # (classes, 22)
    service_p: np.ndarray  # (contexts, classes, 7)
    other_ports: np.ndarray  # (classes, 2) ports for other tcp / other udp
    context_shift: np.ndarray  # (contexts, classes, 22)
    drift_dir: np.ndarray  # (classes, 22)


def _world(spec: DriftSpec, rng: np.random.Generator) -> _World:
    k = spec.n_classes
    centroids = rng.uniform(_LATENT_LO, _LATENT_HI, size=(k, N_ACTIVITY))
    service_p = rng.dirichlet(np.full(_N_SERVICES, 0.5), size=k)
    other_ports = np.column_stack([rng.integers(1024, 49152, size=k), rng.integers(1024, 49152, size=k)])
    partner = np.stack([rng.permutation(k) for _ in range(spec.contexts)])
    shift = spec.context_offset_scale * (centroids[partner] - centroids[None, :, :])
    mix = min(spec.context_offset_scale, 1.0)
    context_p = (1 - mix) * service_p[None, :, :] + mix * service_p[partner]
    drift = centroids[rng.permutation(k)] - centroids
    return _World(centroids, context_p, other_ports, shift, drift)


def _shift(spec: DriftSpec, world: _World, home: int, drifted: bool) -> np.ndarray:
    own = world.context_shift[spec.context_of(home)]
    if not drifted or spec.drift_delta == 0:
        return own
    if spec.drift_target is not None:
        return own + spec.drift_delta * (world.context_shift[spec.drift_target] - own)
    return own + spec.drift_delta * world.drift_dir


def _repair(latent: np.ndarray) -> np.ndarray:
    """Map latent rows to activity columns satisfying the flow invariants."""
    v = np.expm1(np.clip(latent, 0.0, 20.0))
    out = np.empty_like(v)
    n_fields = len(ACTIVITY_FIELDS)
    idx = {f: i for i, f in enumerate(ACTIVITY_FIELDS)}
    for base in (0, n_fields):
        col = {f: v[:, base + i] for f, i in idx.items()}
        rounded = {f: (np.round(x, 3) if f in FLOAT_FIELDS else np.round(x)) for f, x in col.items()}
        total = rounded["packet_total_count"]
        small = np.minimum(rounded["small_packet_count"], total)
        large = np.minimum(rounded["large_packet_count"], total)
        non_empty = np.minimum(rounded["non_empty_packet_count"], total)
        large = np.minimum(large, total - small)
        first = rounded["first_non_empty_packet_size"]
        maxp = np.maximum(rounded["max_packet_size"], first)
        data = np.maximum(rounded["data_byte_count"], maxp)
        std_pay = rounded["std_payload_length"]
        empty = non_empty == 0
        first = np.where(empty, 0, first)
        maxp = np.where(empty, 0, maxp)
        data = np.where(empty, 0, data)
        std_pay = np.where(non_empty <= 1, 0.0, std_pay)
        octets = np.maximum(rounded["octet_total_count"], data)
        few = total <= 1
        avg_iat = np.where(few, 0.0, rounded["average_interarrival_time"])
        std_iat = np.where(few, 0.0, rounded["std_interarrival_time"])
        repaired = {
            "packet_total_count": total, "octet_total_count": octets,
            "small_packet_count": small, "large_packet_count": large,
            "non_empty_packet_count": non_empty, "data_byte_count": data,
            "average_interarrival_time": avg_iat, "first_non_empty_packet_size": first,
            "max_packet_size": maxp, "std_payload_length": std_pay,
            "std_interarrival_time": std_iat,
        }
        for f, i in idx.items():
            out[:, base + i] = repaired[f]
    return out


_SERVICE_PORTS = (sorted(HTTP_PORTS), sorted(TLS_PORTS), sorted(DNS_PORTS), sorted(NTP_PORTS))


@dataclass
class HomeData:
    """Generated flows of one home in file order."""

    home_id: str
    epoch_day: np.ndarray
    labels: np.ndarray
    proto: np.ndarray
    sport: np.ndarray
    dport: np.ndarray
    src: list[str]
    dst: list[str]
    activity: np.ndarray

    def table(self) -> FlowTable:
        return FlowTable(
            home_id=np.full(len(self.epoch_day), self.home_id, dtype=object),
            epoch_day=self.epoch_day,
            proto=self.proto,
            dport=self.dport,
            features=np.hstack([self.activity, service_matrix(self.proto, self.dport)]),
            labels=self.labels.astype(object),
        )


def _generate_home(spec: DriftSpec, world: _World, home: int, rng: np.random.Generator) -> HomeData:
    k = spec.n_classes
    drifting = spec.drift_homes is None or home in spec.drift_homes
    days_l, cls_l, lat_l = [], [], []
    for day in range(spec.days):
        counts = rng.poisson(spec.flows_per_class_per_day, size=k)
        cls = np.repeat(np.arange(k), counts)
        cls = cls[rng.permutation(len(cls))]
        shift = _shift(spec, world, home, drifting and day >= spec.drift_day)
        latent = world.centroids[cls] + shift[cls] + spec.noise_sigma * rng.normal(size=(len(cls), N_ACTIVITY))
        days_l.append(np.full(len(cls), day, dtype=np.int64))
        cls_l.append(cls)
        lat_l.append(latent)
    cls = np.concatenate(cls_l)
    n = len(cls)
    latent = np.vstack(lat_l) if n else np.empty((0, N_ACTIVITY))
    cum = np.cumsum(world.service_p[spec.context_of(home)], axis=1)[cls]
    service = np.minimum((rng.random(n)[:, None] >= cum).sum(axis=1), _N_SERVICES - 1)
    proto = np.select([service <= 1, service == 4, service <= 3, service == 5], [TCP, TCP, UDP, UDP], 1)
    dport = np.full(n, -1, dtype=np.int64)
    for s, ports in enumerate(_SERVICE_PORTS):
        hit = service == s
        dport[hit] = rng.choice(ports, size=int(hit.sum()))
    dport[service == 4] = world.other_ports[cls[service == 4], 0]
    dport[service == 5] = world.other_ports[cls[service == 5], 1]
    sport = np.where(proto == 1, -1, rng.integers(49152, 65536, size=n))
    octets = rng.integers(1, 255, size=(n, 2))
    return HomeData(
        home_id=home_name(home),
        epoch_day=np.concatenate(days_l),
        labels=np.array([class_name(c) for c in cls], dtype=object),
        proto=proto.astype(np.int64),
        sport=sport.astype(np.int64),
        dport=dport,
        src=[f"10.{home}.0.{c + 1}" for c in cls],
        dst=[f"203.0.{a}.{b}" for a, b in octets],
        activity=_repair(latent),
    )


def generate_homes(spec: DriftSpec) -> list[HomeData]:
    root = np.random.SeedSequence(spec.seed)
    world_seq, *home_seqs = root.spawn(spec.n_homes + 1)
    world = _world(spec, np.random.Generator(np.random.PCG64(world_seq)))
    return [
        _generate_home(spec, world, h, np.random.Generator(np.random.PCG64(seq)))
        for h, seq in enumerate(home_seqs)
    ]


def generate_tables(spec: DriftSpec) -> dict[str, FlowTable]:
    """In-memory dataset: home id -> flow table."""
    return {h.home_id: h.table() for h in generate_homes(spec)}


def _cell(value: float, is_float: bool) -> str:
    return repr(float(value)) if is_float else str(int(value))


def write_home_csv(path: str | Path, home: HomeData) -> None:
    float_cols = [name[4:] in FLOAT_FIELDS for name in FLOW_COLUMNS[7:]]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FLOW_COLUMNS + (LABEL_COLUMN,))
        for i in range(len(home.epoch_day)):
            has_ports = home.proto[i] != 1
            row = [
                home.home_id, int(home.epoch_day[i]), home.src[i], home.dst[i],
                int(home.sport[i]) if has_ports else "", int(home.dport[i]) if has_ports else "",
                int(home.proto[i]),
            ]
            row += [_cell(v, f) for v, f in zip(home.activity[i], float_cols)]
            row.append(home.labels[i])
            writer.writerow(row)


def generate(spec: DriftSpec, out_dir: str | Path) -> list[Path]:
    """Write one flow CSV per home plus ``spec.json``; returns the CSV paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for home in generate_homes(spec):
        path = out_dir / f"{home.home_id}.csv"
        write_home_csv(path, home)
        paths.append(path)
    (out_dir / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def load_dataset(data_dir: str | Path, homes: Sequence[str] | None = None) -> dict[str, FlowTable]:
    """Load every ``*.csv`` flow file in a directory, keyed by file stem."""
    from .flows import load_flow_table

    data_dir = Path(data_dir)
    paths = sorted(data_dir.glob("*.csv"))
    if homes is not None:
        wanted = set(homes)
        paths = [p for p in paths if p.stem in wanted]
        missing = wanted - {p.stem for p in paths}
        if missing:
            raise FileNotFoundError(f"no flow file for homes {sorted(missing)} in {data_dir}")
    return {p.stem: load_flow_table(p) for p in paths}
