"""Drillhole and blasting-round ingestion, serialization and validation.

Readings are stored column-wise per round (one ``RoundReadings`` block per
blasting round) so that a full tunnel with hundreds of thousands of sensor
values stays cheap to hold and to aggregate. ``DrillholeRecord`` is the
row view used at the API boundary.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterator, Mapping, Sequence, Union

import numpy as np

from rockmass.errors import BadValue, MissingColumn, OrphanHole
from rockmass.qsystem import Q_FLOOR, QComponents, compute_q, compute_q_base

MWD_PARAMETERS: tuple[str, ...] = (
    "penetr_norm",
    "penetr_rms",
    "rota_press_norm",
    "rota_press_rms",
    "feed_press_norm",
    "hammer_press_norm",
    "water_flow_norm",
    "water_flow_rms",
)

ROUND_COLUMNS: tuple[str, ...] = (
    "round_id",
    "tunnel_id",
    "start_chainage_m",
    "length_m",
    "overburden_m",
    "tunnel_width_m",
    "jn_mult",
    "q_value",
    "rqd",
    "jn",
    "jr",
    "ja",
    "jw",
    "srf",
)
_REQUIRED_ROUND_COLUMNS = ROUND_COLUMNS[:6]
_COMPONENT_COLUMNS = ("rqd", "jn", "jr", "ja", "jw", "srf")
_CHAINAGE_TOL = 1e-6

Source = Union[str, os.PathLike, bytes, IO]


@dataclass(frozen=True)
class DrillholeRecord:
    hole_id: str
    round_id: str
    depth_m: float
    penetr_norm: float
    penetr_rms: float
    rota_press_norm: float
    rota_press_rms: float
    feed_press_norm: float
    hammer_press_norm: float
    water_flow_norm: float
    water_flow_rms: float

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, p) for p in MWD_PARAMETERS)


@dataclass(frozen=True)
class BlastingRound:
    round_id: str
    tunnel_id: str
    start_chainage_m: float
    length_m: float
    overburden_m: float
    tunnel_width_m: float
    jn_mult: float = 1.0
    q_components: QComponents | None = None
    q_value: float | None = None

    @property
    def end_chainage_m(self) -> float:
        return self.start_chainage_m + self.length_m

    @property
    def labeled(self) -> bool:
        return self.q_components is not None or self.q_value is not None

    def q(self) -> float:
        """Q from the components when present, else the recorded value."""
        if self.q_components is not None:
            return compute_q(self.q_components)
        if self.q_value is None:
            raise ValueError(f"round {self.round_id!r} carries no Q label")
        return float(self.q_value)

    def q_base(self) -> float | None:
        if self.q_components is None:
            return None
        return compute_q_base(self.q_components)


@dataclass(frozen=True, eq=False)
class RoundReadings:
    """All sensor readings of one round, in file order.

    ``values`` has one column per entry of ``MWD_PARAMETERS``.
    """

    hole_ids: np.ndarray
    depth_m: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        for arr in (self.hole_ids, self.depth_m, self.values):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.depth_m)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RoundReadings):
            return NotImplemented
        return (
            np.array_equal(self.hole_ids, other.hole_ids)
            and np.array_equal(self.depth_m, other.depth_m)
            and np.array_equal(self.values, other.values)
        )

    @classmethod
    def from_records(cls, records: Sequence[DrillholeRecord]) -> "RoundReadings":
        hole_ids = np.array([r.hole_id for r in records], dtype=object)
        depth = np.array([r.depth_m for r in records], dtype=np.float64)
        values = np.array([r.values for r in records], dtype=np.float64).reshape(len(records), len(MWD_PARAMETERS))
        return cls(hole_ids, depth, values)


@dataclass(frozen=True)
class ParseCounts:
    rows_in: int
    records_out: int
    rejected: tuple[tuple[int, str, str], ...] = ()


@dataclass(frozen=True)
class Provenance:
    source: str
    ingested_at: str
    counts: ParseCounts | None = None


@dataclass(frozen=True, eq=False)
class TunnelDataset:
    rounds: tuple[BlastingRound, ...]
    holes: Mapping[str, RoundReadings]
    provenance: Provenance = field(default_factory=lambda: Provenance("<memory>", _now()))

    def __eq__(self, other) -> bool:
        # provenance is metadata, not content
        if not isinstance(other, TunnelDataset):
            return NotImplemented
        return self.rounds == other.rounds and dict(self.holes) == dict(other.holes)

    def round(self, round_id: str) -> BlastingRound:
        for r in self.rounds:
            if r.round_id == round_id:
                return r
        raise KeyError(round_id)

    @property
    def n_records(self) -> int:
        return sum(len(h) for h in self.holes.values())

    def readings(self, round_id: str) -> RoundReadings:
        return self.holes.get(round_id, _EMPTY_READINGS)

    def records(self, round_id: str | None = None) -> Iterator[DrillholeRecord]:
        ids = [round_id] if round_id is not None else [r.round_id for r in self.rounds]
        for rid in ids:
            block = self.readings(rid)
            for hid, d, vals in zip(block.hole_ids, block.depth_m, block.values):
                yield DrillholeRecord(str(hid), rid, float(d), *map(float, vals))

    def tunnels(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.rounds:
            seen.setdefault(r.tunnel_id, None)
        return list(seen)


_EMPTY_READINGS = RoundReadings(
    np.array([], dtype=object), np.array([], dtype=np.float64), np.zeros((0, len(MWD_PARAMETERS)))
)


@dataclass(frozen=True)
class ColumnMap:
    """Binds this package's field names to the column names of a CSV file."""

    hole_id: str = "hole_id"
    round_id: str = "round_id"
    depth_m: str = "depth_m"
    parameters: Mapping[str, str] = field(default_factory=lambda: {p: p for p in MWD_PARAMETERS})

    def required(self) -> list[str]:
        return [self.hole_id, self.round_id, self.depth_m] + [self.parameters[p] for p in MWD_PARAMETERS]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _open_text(source: Source) -> tuple[IO[str], str]:
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8")), "<bytes>"
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8"), str(source)
    if isinstance(source, io.TextIOBase):
        return source, getattr(source, "name", "<stream>")
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), getattr(source, "name", "<stream>")


def _fmt(x: float | None) -> str:
    if x is None:
        return ""
    return repr(float(x))


def _finite(text: str, row: int, column: str) -> float:
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise BadValue(row, column, f"not a number: {text!r}") from None
    if not math.isfinite(v):
        raise BadValue(row, column, f"non-finite value {text!r}")
    return v


def parse_rounds(source: Source) -> list[BlastingRound]:
    """Read ``rounds.csv``; rows are returned sorted by chainage within each tunnel."""
    fh, _ = _open_text(source)
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in _REQUIRED_ROUND_COLUMNS:
            if col not in header:
                raise MissingColumn(col)
        has_components = [c for c in _COMPONENT_COLUMNS if c in header]
        if has_components and len(has_components) != len(_COMPONENT_COLUMNS):
            missing = [c for c in _COMPONENT_COLUMNS if c not in header]
            raise MissingColumn(missing[0])
        if not has_components and "q_value" not in header:
            raise MissingColumn("q_value")
        rounds = []
        for i, rec in enumerate(reader, start=1):
            jn_mult = _finite(rec["jn_mult"], i, "jn_mult") if rec.get("jn_mult") not in (None, "") else 1.0
            comps = None
            if has_components and any(rec[c] != "" for c in _COMPONENT_COLUMNS):
                vals = {c: _finite(rec[c], i, c) for c in _COMPONENT_COLUMNS}
                comps = QComponents(jn_mult=jn_mult, **vals)
            qv = rec.get("q_value")
            q_value = _finite(qv, i, "q_value") if qv not in (None, "") else None
            if not rec["round_id"]:
                raise BadValue(i, "round_id", "empty identifier")
            rounds.append(
                BlastingRound(
                    round_id=rec["round_id"],
                    tunnel_id=rec["tunnel_id"],
                    start_chainage_m=_finite(rec["start_chainage_m"], i, "start_chainage_m"),
                    length_m=_finite(rec["length_m"], i, "length_m"),
                    overburden_m=_finite(rec["overburden_m"], i, "overburden_m"),
                    tunnel_width_m=_finite(rec["tunnel_width_m"], i, "tunnel_width_m"),
                    jn_mult=jn_mult,
                    q_components=comps,
                    q_value=q_value,
                )
            )
    return _sort_rounds(rounds)


def _sort_rounds(rounds: Sequence[BlastingRound]) -> list[BlastingRound]:
    order: dict[str, int] = {}
    for r in rounds:
        order.setdefault(r.tunnel_id, len(order))
    return sorted(rounds, key=lambda r: (order[r.tunnel_id], r.start_chainage_m))


def parse_drillholes(
    source: Source,
    rounds: Sequence[BlastingRound] | Source,
    schema: ColumnMap | None = None,
    on_error: str = "raise",
) -> TunnelDataset:
    """Parse ``drillholes.csv`` against a set of rounds.

    With ``on_error="raise"`` the first bad row raises ``BadValue`` /
    ``OrphanHole``. With ``on_error="skip"`` bad rows are rejected and listed
    in ``dataset.provenance.counts`` so that rows in = records out + rejected.
    """
    if on_error not in ("raise", "skip"):
        raise ValueError("on_error must be 'raise' or 'skip'")
    schema = schema or ColumnMap()
    if not isinstance(rounds, (list, tuple)):
        rounds = parse_rounds(rounds)
    rounds = _sort_rounds(rounds)
    known = {r.round_id for r in rounds}

    fh, name = _open_text(source)
    per_round: dict[str, tuple[list, list, list]] = {}
    last_depth: dict[str, float] = {}
    hole_round: dict[str, str] = {}
    rejected: list[tuple[int, str, str]] = []
    rows_in = 0
    param_cols = [schema.parameters[p] for p in MWD_PARAMETERS]
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn(schema.hole_id) from None
        index = {c: j for j, c in enumerate(header)}
        for col in schema.required():
            if col not in index:
                raise MissingColumn(col)
        i_hole, i_round, i_depth = index[schema.hole_id], index[schema.round_id], index[schema.depth_m]
        i_params = [index[c] for c in param_cols]
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            rows_in += 1
            try:
                if len(row) != len(header):
                    raise BadValue(row_no, "<row>", f"expected {len(header)} fields, got {len(row)}")
                hole, rid = row[i_hole], row[i_round]
                if rid not in known:
                    raise OrphanHole(rid)
                depth = _finite(row[i_depth], row_no, schema.depth_m)
                if depth < 0:
                    raise BadValue(row_no, schema.depth_m, "negative depth")
                vals = [_finite(row[j], row_no, c) for j, c in zip(i_params, param_cols)]
                prev = last_depth.get(hole)
                if prev is not None:
                    if depth == prev:
                        raise BadValue(row_no, schema.depth_m, f"duplicate reading at depth {depth} in hole {hole!r}")
                    if depth < prev:
                        raise BadValue(row_no, schema.depth_m, f"depth decreases within hole {hole!r}")
                owner = hole_round.setdefault(hole, rid)
                if owner != rid:
                    raise BadValue(row_no, schema.round_id, f"hole {hole!r} already belongs to round {owner!r}")
            except (BadValue, OrphanHole) as exc:
                if on_error == "raise":
                    raise
                column = getattr(exc, "column", schema.round_id)
                rejected.append((row_no, column, str(exc)))
                continue
            last_depth[hole] = depth
            h, d, v = per_round.setdefault(rid, ([], [], []))
            h.append(hole)
            d.append(depth)
            v.append(vals)

    holes = {}
    for r in rounds:
        if r.round_id in per_round:
            h, d, v = per_round[r.round_id]
            holes[r.round_id] = RoundReadings(
                np.array(h, dtype=object), np.array(d, dtype=np.float64), np.array(v, dtype=np.float64)
            )
    counts = ParseCounts(rows_in, rows_in - len(rejected), tuple(rejected))
    return TunnelDataset(tuple(rounds), holes, Provenance(name, _now(), counts))


def load_dataset(drillholes: Source, rounds: Source, schema: ColumnMap | None = None, on_error: str = "raise") -> TunnelDataset:
    return parse_drillholes(drillholes, parse_rounds(rounds), schema, on_error)


def serialize_rounds(dataset: TunnelDataset | Sequence[BlastingRound]) -> bytes:
    rounds = dataset.rounds if isinstance(dataset, TunnelDataset) else dataset
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROUND_COLUMNS)
    for r in rounds:
        c = r.q_components
        comps = [c.rqd, c.jn, c.jr, c.ja, c.jw, c.srf] if c is not None else [None] * 6
        w.writerow(
            [r.round_id, r.tunnel_id]
            + [_fmt(x) for x in (r.start_chainage_m, r.length_m, r.overburden_m, r.tunnel_width_m, r.jn_mult, r.q_value)]
            + [_fmt(x) for x in comps]
        )
    return buf.getvalue().encode("utf-8")


def serialize_drillholes(dataset: TunnelDataset) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("hole_id", "round_id", "depth_m") + MWD_PARAMETERS)
    for r in dataset.rounds:
        block = dataset.holes.get(r.round_id)
        if block is None:
            continue
        for hid, d, vals in zip(block.hole_ids, block.depth_m.tolist(), block.values.tolist()):
            w.writerow([hid, r.round_id, repr(d)] + [repr(v) for v in vals])
    return buf.getvalue().encode("utf-8")


def write_dataset(dataset: TunnelDataset, directory: str | os.PathLike) -> tuple[Path, Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    holes_path, rounds_path = out / "drillholes.csv", out / "rounds.csv"
    holes_path.write_bytes(serialize_drillholes(dataset))
    rounds_path.write_bytes(serialize_rounds(dataset))
    return holes_path, rounds_path


@dataclass(frozen=True)
class Finding:
    check: str
    ids: tuple[str, ...]
    message: str


@dataclass(frozen=True)
class ValidationReport:
    checks: Mapping[str, bool]
    findings: tuple[Finding, ...]

    @property
    def ok(self) -> bool:
        return not self.findings

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": dict(self.checks),
            "findings": [{"check": f.check, "ids": list(f.ids), "message": f.message} for f in self.findings],
        }


VALIDATION_CHECKS = (
    "overlap",
    "unlabeled round",
    "nonpositive length",
    "invalid q components",
    "q mismatch",
    "q out of range",
    "orphan holes",
    "round without readings",
    "non-finite value",
    "depth order",
    "hole spans rounds",
)


def validate(dataset: TunnelDataset) -> ValidationReport:
    """Run every consistency check; the dataset is only read."""
    findings: list[Finding] = []

    def add(check, ids, message):
        findings.append(Finding(check, tuple(str(i) for i in ids), message))

    by_tunnel: dict[str, list[BlastingRound]] = {}
    for r in dataset.rounds:
        by_tunnel.setdefault(r.tunnel_id, []).append(r)
        if r.length_m <= 0:
            add("nonpositive length", [r.round_id], f"length_m={r.length_m}")
        if not r.labeled:
            add("unlabeled round", [r.round_id], "neither q_value nor q_components present")
            continue
        q = None
        if r.q_components is not None:
            try:
                q = compute_q(r.q_components)
            except ValueError as exc:
                add("invalid q components", [r.round_id], str(exc))
        if q is not None and r.q_value is not None and not math.isclose(q, r.q_value, rel_tol=1e-9):
            add("q mismatch", [r.round_id], f"components give {q}, recorded {r.q_value}")
        q = q if q is not None else r.q_value
        if q is not None and not q >= Q_FLOOR:
            add("q out of range", [r.round_id], f"Q={q} below {Q_FLOOR}")

    for tid, rs in by_tunnel.items():
        rs = sorted(rs, key=lambda r: r.start_chainage_m)
        for a, b in zip(rs, rs[1:]):
            # chainages are decimal metres; float sums like 0.1 + 0.2 must not count as overlap
            if b.start_chainage_m < a.end_chainage_m - _CHAINAGE_TOL:
                add("overlap", [a.round_id, b.round_id], f"tunnel {tid}: rounds overlap along chainage")

    known = {r.round_id for r in dataset.rounds}
    for rid in dataset.holes:
        if rid not in known:
            add("orphan holes", [rid], "readings reference an unknown round")
    owner: dict[str, str] = {}
    spans: set = set()
    for r in dataset.rounds:
        block = dataset.holes.get(r.round_id)
        if block is None or len(block) == 0:
            add("round without readings", [r.round_id], "no drillhole readings")
            continue
        if not np.all(np.isfinite(block.values)) or not np.all(np.isfinite(block.depth_m)):
            add("non-finite value", [r.round_id], "NaN or infinite sensor value")
        last: dict[str, float] = {}
        bad_holes = set()
        for hid, d in zip(block.hole_ids, block.depth_m):
            prev = last.get(hid)
            if (prev is not None and not d > prev) or d < 0:
                bad_holes.add(hid)
            last[hid] = d
            o = owner.setdefault(hid, r.round_id)
            if o != r.round_id and (hid, r.round_id) not in spans:
                spans.add((hid, r.round_id))
                add("hole spans rounds", [hid, o, r.round_id], "hole appears in two rounds")
        for hid in sorted(bad_holes):
            add("depth order", [hid], "depth not strictly increasing / negative")

    failed = {f.check for f in findings}
    checks = {c: c not in failed for c in VALIDATION_CHECKS}
    return ValidationReport(checks, tuple(findings))
