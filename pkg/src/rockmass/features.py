"""Section aggregation, the canonical 51-slot feature vector, and feature-set reductions."""

from __future__ import annotations

import csv
import io
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from rockmass.dataset import MWD_PARAMETERS, BlastingRound, DrillholeRecord, RoundReadings, TunnelDataset
from rockmass.errors import (
    BadValue,
    DegenerateFeatureWarning,
    EmptyInput,
    EmptySection,
    MissingColumn,
    UnknownKind,
    WindowTooLarge,
)
from rockmass.qsystem import ZoneTag, q_to_class, tag_transition_zones

STATISTICS: tuple[str, ...] = ("mean", "median", "standard_deviation", "variance", "skewness", "kurtosis")
GEOMETRY: tuple[str, ...] = ("overburden_m", "tunnel_width_m", "jn_mult")

# frozen contract: parameter-major, then statistic, then geometry
MWD_FEATURES: tuple[str, ...] = tuple(f"{p}_{s}" for p in MWD_PARAMETERS for s in STATISTICS)
FEATURE_NAMES: tuple[str, ...] = MWD_FEATURES + GEOMETRY
N_FEATURES = len(FEATURE_NAMES)


def _moments(x: np.ndarray) -> np.ndarray:
    """Six statistics per column of a (n, p) block, returned as (p, 6)."""
    n = x.shape[0]
    mean = x.mean(axis=0)
    med = np.median(x, axis=0)
    d = x - mean
    m2 = (d * d).mean(axis=0)
    m3 = (d * d * d).mean(axis=0)
    m4 = ((d * d) * (d * d)).mean(axis=0)
    var = m2 * n / (n - 1) if n > 1 else np.zeros_like(m2)
    std = np.sqrt(var)
    # zero spread up to rounding: skewness and kurtosis defined as 0
    scale = np.max(np.abs(x), axis=0)
    flat = m2 <= (64 * np.finfo(float).eps * np.maximum(scale, np.finfo(float).tiny)) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        skew = np.where(flat, 0.0, m3 / np.where(flat, 1.0, m2) ** 1.5)
        kurt = np.where(flat, 0.0, m4 / np.where(flat, 1.0, m2) ** 2 - 3.0)
    var = np.where(flat, 0.0, var)
    std = np.where(flat, 0.0, std)
    return np.stack([mean, med, std, var, skew, kurt], axis=1)


def aggregate_section(values, geometry: Sequence[float]) -> np.ndarray:
    """Feature vector (length 51) of one section.

    Parameters
    ----------
    values
        Either a mapping ``parameter -> sequence of readings`` covering all
        eight MWD parameters, or a sequence of eight reading sequences in
        ``MWD_PARAMETERS`` order, or an ``(n, 8)`` array.
    geometry
        ``(overburden_m, tunnel_width_m, jn_mult)``, copied verbatim.
    """
    if isinstance(values, Mapping):
        missing = [p for p in MWD_PARAMETERS if p not in values]
        if missing:
            raise EmptyInput(f"no readings for parameter {missing[0]!r}")
        cols = [np.asarray(values[p], dtype=np.float64).ravel() for p in MWD_PARAMETERS]
    elif isinstance(values, np.ndarray) and values.ndim == 2:
        if values.shape[1] != len(MWD_PARAMETERS):
            raise EmptyInput(f"expected {len(MWD_PARAMETERS)} parameter columns, got {values.shape[1]}")
        cols = [values[:, j].astype(np.float64) for j in range(values.shape[1])]
    else:
        cols = [np.asarray(v, dtype=np.float64).ravel() for v in values]
        if len(cols) != len(MWD_PARAMETERS):
            raise EmptyInput(f"expected {len(MWD_PARAMETERS)} parameter lists, got {len(cols)}")
    for p, c in zip(MWD_PARAMETERS, cols):
        if c.size == 0:
            raise EmptyInput(f"no readings for parameter {p!r}")
    geometry = tuple(float(g) for g in geometry)
    if len(geometry) != len(GEOMETRY):
        raise EmptyInput("geometry must be (overburden_m, tunnel_width_m, jn_mult)")
    stats = np.concatenate([_moments(c[:, None])[0] for c in cols])
    return np.concatenate([stats, np.asarray(geometry)])


@dataclass(frozen=True, eq=False)
class SectionSample:
    tunnel_id: str
    round_id: str
    section_start_m: float
    features: np.ndarray
    label_q: float | None = None
    label_q_base: float | None = None
    label_class: str | None = None
    zone: ZoneTag | None = None

    def __eq__(self, other) -> bool:
        if not isinstance(other, SectionSample):
            return NotImplemented
        return (
            (self.tunnel_id, self.round_id, self.section_start_m, self.label_q, self.label_q_base, self.label_class, self.zone)
            == (other.tunnel_id, other.round_id, other.section_start_m, other.label_q, other.label_q_base, other.label_class, other.zone)
            and np.array_equal(self.features, other.features)
        )

    def feature_dict(self) -> dict[str, float]:
        return dict(zip(FEATURE_NAMES, self.features.tolist()))


def _as_block(holes) -> RoundReadings:
    if isinstance(holes, RoundReadings):
        return holes
    return RoundReadings.from_records(list(holes))


def _round_labels(rnd: BlastingRound) -> tuple[float | None, float | None, str | None]:
    if not rnd.labeled:
        return None, None, None
    q = rnd.q()
    return q, rnd.q_base(), q_to_class(q).value


def _section_features(rnd: BlastingRound, block: RoundReadings, section_length_m: float) -> list[tuple[float, np.ndarray]]:
    if not section_length_m > 0:
        raise ValueError("section_length_m must be positive")
    # small tolerance so 5.0 / 1.0 never floors to 4 through rounding
    n_sec = int(math.floor(rnd.length_m / section_length_m + 1e-9))
    if n_sec == 0:
        return []
    idx = np.floor(np.asarray(block.depth_m) / section_length_m).astype(np.int64)
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    bounds = np.searchsorted(sorted_idx, np.arange(n_sec + 1))
    geom = np.array([rnd.overburden_m, rnd.tunnel_width_m, rnd.jn_mult])
    out = []
    for s in range(n_sec):
        lo, hi = bounds[s], bounds[s + 1]
        if hi <= lo:
            raise EmptySection(s, rnd.round_id)
        rows = block.values[order[lo:hi]]
        stats = _moments(rows).ravel()
        out.append((rnd.start_chainage_m + s * section_length_m, np.concatenate([stats, geom])))
    return out


def section_samples(
    rnd: BlastingRound,
    holes: RoundReadings | Iterable[DrillholeRecord],
    section_length_m: float = 1.0,
) -> list[SectionSample]:
    """Cut one round into ``floor(length / section_length)`` sections.

    A reading at depth ``d`` belongs to section ``floor(d / section_length)``;
    readings past the last full section are ignored. Every section carries
    the round's labels. Zone tags are left unset (they need the whole tunnel,
    see ``build_sections``).
    """
    block = _as_block(holes)
    q, qb, cls = _round_labels(rnd)
    return [
        SectionSample(rnd.tunnel_id, rnd.round_id, start, feats, q, qb, cls)
        for start, feats in _section_features(rnd, block, section_length_m)
    ]


@dataclass(frozen=True, eq=False)
class SectionTable:
    """Column-oriented collection of section samples.

    Labels are ``nan`` / ``None`` for unlabeled rounds; ``zone`` is ``None``
    where no tag was computed.
    """

    X: np.ndarray
    feature_names: tuple[str, ...]
    tunnel_id: np.ndarray
    round_id: np.ndarray
    section_start_m: np.ndarray
    q: np.ndarray
    q_base: np.ndarray
    q_class: np.ndarray
    zone: np.ndarray

    def __len__(self) -> int:
        return self.X.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SectionTable):
            return NotImplemented
        return self.feature_names == other.feature_names and all(
            np.array_equal(getattr(self, a), getattr(other, a), equal_nan=a in ("X", "q", "q_base", "section_start_m"))
            for a in ("X", "tunnel_id", "round_id", "section_start_m", "q", "q_base", "q_class", "zone")
        )

    @property
    def labeled(self) -> bool:
        return len(self) > 0 and all(c is not None for c in self.q_class)

    def subset(self, index) -> "SectionTable":
        index = np.asarray(index)
        return replace(
            self,
            X=self.X[index],
            tunnel_id=self.tunnel_id[index],
            round_id=self.round_id[index],
            section_start_m=self.section_start_m[index],
            q=self.q[index],
            q_base=self.q_base[index],
            q_class=self.q_class[index],
            zone=self.zone[index],
        )

    def with_features(self, names: Sequence[str]) -> "SectionTable":
        pos = {n: i for i, n in enumerate(self.feature_names)}
        missing = [n for n in names if n not in pos]
        if missing:
            raise UnknownKind(f"features not present: {missing}")
        cols = [pos[n] for n in names]
        return replace(self, X=self.X[:, cols], feature_names=tuple(names))

    def samples(self) -> list[SectionSample]:
        out = []
        for i in range(len(self)):
            out.append(
                SectionSample(
                    str(self.tunnel_id[i]),
                    str(self.round_id[i]),
                    float(self.section_start_m[i]),
                    self.X[i].copy(),
                    None if math.isnan(self.q[i]) else float(self.q[i]),
                    None if math.isnan(self.q_base[i]) else float(self.q_base[i]),
                    self.q_class[i],
                    None if self.zone[i] is None else ZoneTag(self.zone[i]),
                )
            )
        return out

    @classmethod
    def from_samples(cls, samples: Sequence[SectionSample], feature_names: Sequence[str] = FEATURE_NAMES) -> "SectionTable":
        n = len(samples)
        X = np.array([s.features for s in samples], dtype=np.float64).reshape(n, len(feature_names))
        return cls(
            X=X,
            feature_names=tuple(feature_names),
            tunnel_id=np.array([s.tunnel_id for s in samples], dtype=object),
            round_id=np.array([s.round_id for s in samples], dtype=object),
            section_start_m=np.array([s.section_start_m for s in samples], dtype=np.float64),
            q=np.array([np.nan if s.label_q is None else s.label_q for s in samples], dtype=np.float64),
            q_base=np.array([np.nan if s.label_q_base is None else s.label_q_base for s in samples], dtype=np.float64),
            q_class=np.array([s.label_class for s in samples], dtype=object),
            zone=np.array([None if s.zone is None else ZoneTag(s.zone).value for s in samples], dtype=object),
        )


def build_sections(
    dataset: TunnelDataset,
    section_length_m: float = 1.0,
    transition_window_m: float = 10.0,
) -> SectionTable:
    """Aggregate every round of ``dataset`` and tag transition zones per tunnel."""
    rows: list[tuple] = []
    for rnd in dataset.rounds:
        q, qb, cls = _round_labels(rnd)
        for start, feats in _section_features(rnd, dataset.readings(rnd.round_id), section_length_m):
            rows.append((rnd.tunnel_id, rnd.round_id, start, feats, q, qb, cls))
    n = len(rows)
    table = SectionTable(
        X=np.array([r[3] for r in rows], dtype=np.float64).reshape(n, N_FEATURES),
        feature_names=FEATURE_NAMES,
        tunnel_id=np.array([r[0] for r in rows], dtype=object),
        round_id=np.array([r[1] for r in rows], dtype=object),
        section_start_m=np.array([r[2] for r in rows], dtype=np.float64),
        q=np.array([np.nan if r[4] is None else r[4] for r in rows], dtype=np.float64),
        q_base=np.array([np.nan if r[5] is None else r[5] for r in rows], dtype=np.float64),
        q_class=np.array([r[6] for r in rows], dtype=object),
        zone=np.array([None] * n, dtype=object),
    )
    return tag_zones(table, transition_window_m)


def tag_zones(table: SectionTable, window_m: float = 10.0) -> SectionTable:
    """Fill ``zone`` per tunnel from the section classes (unlabeled tunnels stay untagged)."""
    zone = np.array([None] * len(table), dtype=object)
    for tunnel in dict.fromkeys(table.tunnel_id.tolist()):
        idx = np.flatnonzero(table.tunnel_id == tunnel)
        if any(c is None for c in table.q_class[idx]):
            continue
        idx = idx[np.argsort(table.section_start_m[idx], kind="stable")]
        tags = tag_transition_zones(list(zip(table.section_start_m[idx], table.q_class[idx])), window_m)
        zone[idx] = [t.value for t in tags]
    return replace(table, zone=zone)


# ---------------------------------------------------------------- sections.csv

_ID_COLUMNS = ("tunnel_id", "round_id", "section_start_m")
_LABEL_COLUMNS = ("label_q", "label_q_base", "label_class", "zone")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def serialize_sections(table: SectionTable) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_ID_COLUMNS + tuple(table.feature_names) + _LABEL_COLUMNS)
    for i in range(len(table)):
        w.writerow(
            [table.tunnel_id[i], table.round_id[i], repr(float(table.section_start_m[i]))]
            + [repr(v) for v in table.X[i].tolist()]
            + [_fmt(float(table.q[i])), _fmt(float(table.q_base[i])), _fmt(table.q_class[i]), _fmt(table.zone[i])]
        )
    return buf.getvalue().encode("utf-8")


def write_sections(table: SectionTable, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize_sections(table))
    return path


def read_sections(source) -> SectionTable:
    """Read ``sections.csv``. Label columns are optional (unlabeled input for prediction)."""
    if isinstance(source, bytes):
        fh = io.StringIO(source.decode("utf-8"))
    else:
        fh = open(source, newline="", encoding="utf-8")
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn("tunnel_id") from None
        for c in _ID_COLUMNS:
            if c not in header:
                raise MissingColumn(c)
        feats = [c for c in header if c not in _ID_COLUMNS and c not in _LABEL_COLUMNS]
        pos = {c: j for j, c in enumerate(header)}
        rows = list(reader)
    n = len(rows)

    def num(row_no, row, col):
        text = row[pos[col]]
        if text == "":
            return np.nan
        try:
            return float(text)
        except ValueError:
            raise BadValue(row_no, col, f"not a number: {text!r}") from None

    X = np.empty((n, len(feats)))
    for i, row in enumerate(rows):
        for j, c in enumerate(feats):
            v = num(i + 1, row, c)
            if not math.isfinite(v):
                raise BadValue(i + 1, c, "non-finite feature value")
            X[i, j] = v

    def opt(col, conv):
        if col not in pos:
            return [None] * n
        return [conv(i + 1, r) for i, r in enumerate(rows)]

    q = opt("label_q", lambda i, r: num(i, r, "label_q"))
    qb = opt("label_q_base", lambda i, r: num(i, r, "label_q_base"))
    cls = opt("label_class", lambda i, r: r[pos["label_class"]] or None)
    zone = opt("zone", lambda i, r: r[pos["zone"]] or None)
    return SectionTable(
        X=X,
        feature_names=tuple(feats),
        tunnel_id=np.array([r[pos["tunnel_id"]] for r in rows], dtype=object),
        round_id=np.array([r[pos["round_id"]] for r in rows], dtype=object),
        section_start_m=np.array([num(i + 1, r, "section_start_m") for i, r in enumerate(rows)], dtype=np.float64),
        q=np.array([np.nan if v is None else v for v in q], dtype=np.float64),
        q_base=np.array([np.nan if v is None else v for v in qb], dtype=np.float64),
        q_class=np.array(cls, dtype=object),
        zone=np.array(zone, dtype=object),
    )


# ---------------------------------------------------------------- feature sets


class FeatureSetKind(str, Enum):
    ALL51 = "All51"
    DOMAIN35 = "Domain35"
    AUTOMATED21 = "Automated21"
    DEPENDENT39 = "Dependent39"
    MWD_ONLY48 = "MwdOnly48"
    MWD_MEDIAN8 = "MwdMedian8"

    def __str__(self) -> str:
        return self.value


_SOURCE_PARAMS = {
    "PenetrNorm": "penetr_norm",
    "PenetrRMS": "penetr_rms",
    "RotaPressNorm": "rota_press_norm",
    "RotaPressRMS": "rota_press_rms",
    "FeedPressNorm": "feed_press_norm",
    "HammerPressNorm": "hammer_press_norm",
    "WaterFlowNorm": "water_flow_norm",
    "WaterflowNorm": "water_flow_norm",
    "WaterFlowRMS": "water_flow_rms",
}
_SOURCE_STATS = {
    "Mean": "mean",
    "Median": "median",
    "StandardDeviation": "standard_deviation",
    "Variance": "variance",
    "Skewness": "skewness",
    "Kurtosis": "kurtosis",
}
_SOURCE_GEOMETRY = {"ContourWidth": "tunnel_width_m", "TerrainHeight": "overburden_m", "JnMult": "jn_mult"}


def canonical_feature_name(name: str) -> str:
    """Map a drill-rig export name (e.g. ``PenetrNormMedian``) to the canonical slot name."""
    if name in FEATURE_NAMES:
        return name
    if name in _SOURCE_GEOMETRY:
        return _SOURCE_GEOMETRY[name]
    for prefix in sorted(_SOURCE_PARAMS, key=len, reverse=True):
        if name.startswith(prefix) and name[len(prefix):] in _SOURCE_STATS:
            return f"{_SOURCE_PARAMS[prefix]}_{_SOURCE_STATS[name[len(prefix):]]}"
    raise UnknownKind(f"unknown feature name {name!r}")


# the reduced set found by automated selection on the full tunnel dataset,
# kept verbatim in the drill-rig export naming
AUTOMATED_SOURCE_NAMES: tuple[str, ...] = (
    "ContourWidth",
    "TerrainHeight",
    "JnMult",
    "FeedPressNormMedian",
    "FeedPressNormVariance",
    "HammerPressNormMedian",
    "HammerPressNormKurtosis",
    "PenetrNormMedian",
    "PenetrNormStandardDeviation",
    "PenetrRMSMean",
    "PenetrRMSKurtosis",
    "PenetrRMSVariance",
    "RotaPressNormMedian",
    "RotaPressRMSMean",
    "RotaPressNormStandardDeviation",
    "RotaPressRMSKurtosis",
    "RotaPressRMSVariance",
    "WaterFlowNormMedian",
    "WaterFlowNormSkewness",
    "WaterFlowRMSKurtosis",
    "WaterFlowRMSStandardDeviation",
)

_INDEPENDENT_PARAMS = ("feed_press_norm", "hammer_press_norm")


def _in_canonical_order(names: Iterable[str]) -> tuple[str, ...]:
    keep = set(names)
    return tuple(n for n in FEATURE_NAMES if n in keep)


FEATURE_SETS: dict[FeatureSetKind, tuple[str, ...]] = {
    FeatureSetKind.ALL51: FEATURE_NAMES,
    FeatureSetKind.DOMAIN35: tuple(
        n for n in FEATURE_NAMES if not (n.endswith("_mean") or n.endswith("_standard_deviation"))
    ),
    FeatureSetKind.AUTOMATED21: _in_canonical_order(canonical_feature_name(n) for n in AUTOMATED_SOURCE_NAMES),
    FeatureSetKind.DEPENDENT39: tuple(
        n for n in FEATURE_NAMES if not any(n.startswith(p + "_") for p in _INDEPENDENT_PARAMS)
    ),
    FeatureSetKind.MWD_ONLY48: MWD_FEATURES,
    FeatureSetKind.MWD_MEDIAN8: tuple(f"{p}_median" for p in MWD_PARAMETERS),
}


def feature_set_kind(kind) -> FeatureSetKind:
    if isinstance(kind, FeatureSetKind):
        return kind
    key = str(kind).replace("_", "").replace("-", "").lower()
    for k in FeatureSetKind:
        if key in (k.value.lower(), k.name.replace("_", "").lower()):
            return k
    if key == "all":
        return FeatureSetKind.ALL51
    raise UnknownKind(f"unknown feature set {kind!r}")


def feature_set(kind) -> tuple[str, ...]:
    return FEATURE_SETS[feature_set_kind(kind)]


def select_features(samples, kind):
    """Restrict samples to a feature set.

    Accepts a ``SectionTable`` (returns a narrowed table), a sequence of
    ``SectionSample`` (returns samples with reduced vectors) or a 2-D array
    whose columns follow ``FEATURE_NAMES`` (returns the column subset).
    """
    names = feature_set(kind)
    if isinstance(samples, SectionTable):
        return samples.with_features(names)
    cols = [FEATURE_NAMES.index(n) for n in names]
    if isinstance(samples, np.ndarray):
        if samples.shape[-1] != N_FEATURES:
            raise UnknownKind(f"expected {N_FEATURES} canonical columns, got {samples.shape[-1]}")
        return samples[..., cols]
    return [replace(s, features=np.asarray(s.features)[cols]) for s in samples]


# ---------------------------------------------------------------- SULOV-style reduction


def _discretize(x: np.ndarray, n_bins: int) -> np.ndarray:
    edges = np.quantile(x, np.linspace(0, 1, n_bins + 1)[1:-1])
    return np.searchsorted(np.unique(edges), x, side="right")


def mutual_information(x: np.ndarray, y: np.ndarray, n_bins: int = 10) -> float:
    """Plug-in MI (nats) between a quantile-binned feature and discrete labels."""
    xb = _discretize(np.asarray(x, dtype=float), n_bins)
    _, yb = np.unique(y, return_inverse=True)
    joint = np.zeros((xb.max() + 1, yb.max() + 1))
    np.add.at(joint, (xb, yb), 1.0)
    joint /= joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (px @ py)[nz])))


def sulov_reduce(
    X: np.ndarray,
    labels,
    feature_names: Sequence[str],
    correlation_threshold: float = 0.7,
    importance_threshold: float = 0.95,
    task: str = "classification",
    seed: int = 0,
    n_bins: int = 10,
) -> list[str]:
    """Correlated-feature elimination followed by boosted-tree importance pruning.

    1. Zero-variance columns are excluded (``DegenerateFeatureWarning``).
    2. Features are visited by decreasing mutual information with the label;
       a feature is kept only if its absolute Pearson correlation with every
       already-kept feature is at most ``correlation_threshold``. Among any
       correlated pair the higher-MI member therefore survives.
    3. A gradient-boosted-tree model is fit on the survivors; features are
       kept in decreasing importance until the cumulative share reaches
       ``importance_threshold``.

    Returns the selected names in their input order.
    """
    from rockmass.models import ModelSpec, feature_importances, fit

    X = np.asarray(X, dtype=np.float64)
    names = list(feature_names)
    if X.ndim != 2 or X.shape[1] != len(names):
        raise ValueError("X columns must align with feature_names")
    if len(names) < 2:
        raise ValueError("need at least two features")
    y = np.asarray(labels)
    std = X.std(axis=0)
    live = [j for j in range(len(names)) if std[j] > 0]
    for j in range(len(names)):
        if std[j] == 0:
            warnings.warn(f"feature {names[j]!r} has zero variance and was excluded", DegenerateFeatureWarning, stacklevel=2)
    if not live:
        return []
    if task == "classification":
        mi = {j: mutual_information(X[:, j], y, n_bins) for j in live}
    else:
        yb = _discretize(y.astype(float), n_bins)
        mi = {j: mutual_information(X[:, j], yb, n_bins) for j in live}
    corr = np.abs(np.corrcoef(X[:, live], rowvar=False)).reshape(len(live), len(live))
    pos = {j: i for i, j in enumerate(live)}
    kept: list[int] = []
    for j in sorted(live, key=lambda j: (-mi[j], j)):
        if all(corr[pos[j], pos[k]] <= correlation_threshold for k in kept):
            kept.append(j)
    kept.sort()
    if len(kept) == 1:
        return [names[kept[0]]]

    spec = ModelSpec("gbt", task, {"n_rounds": 50, "max_depth": 3}, seed)
    model = fit(spec, X[:, kept], y, [names[j] for j in kept])
    imp = feature_importances(model)
    if imp.sum() <= 0:
        return [names[j] for j in kept]
    imp = imp / imp.sum()
    order = sorted(range(len(kept)), key=lambda i: (-imp[i], i))
    chosen: list[int] = []
    total = 0.0
    for i in order:
        chosen.append(kept[i])
        total += imp[i]
        if total >= importance_threshold - 1e-12:
            break
    return [names[j] for j in sorted(chosen)]


# ---------------------------------------------------------------- signal utility


def rms_filter(signal: Sequence[float], window: int) -> np.ndarray:
    """Sliding root-mean-square of the deviation from the window mean.

    Each output sample uses the ``window`` consecutive inputs centred on it
    (left-biased for even windows). Near the edges the window shrinks to the
    part that fits inside the signal, but never below two samples: a single
    reading carries no deviation, so a one-sample remnant is widened inward.
    """
    x = np.asarray(signal, dtype=np.float64)
    n = x.size
    if window < 1 or int(window) != window:
        raise WindowTooLarge(f"window must be a positive integer, got {window!r}")
    if window > n:
        raise WindowTooLarge(f"window {window} exceeds signal length {n}")
    half_left = (window - 1) // 2
    half_right = window - 1 - half_left
    out = np.empty(n)
    for i in range(n):
        lo, hi = max(0, i - half_left), min(n, i + half_right + 1)
        if hi - lo < min(2, window):
            lo, hi = (lo - 1, hi) if lo > 0 else (lo, hi + 1)
        seg = x[lo:hi]
        out[i] = math.sqrt(float(np.mean((seg - seg.mean()) ** 2)))
    return out
