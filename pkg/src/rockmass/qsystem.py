"""Q-value arithmetic, Q-classes, label groupings and transition-zone tags."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from rockmass.errors import (
    NonPositiveComponent,
    OutOfRange,
    UnknownScheme,
    UnsortedInput,
)

DROP = "DROP"


class QClass(str, Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"
    E1 = "E1"
    E2 = "E2"
    E = "E"  # coarse E = E1 + E2

    def __str__(self) -> str:
        return self.value


FINE_CLASSES: tuple[str, ...] = ("A", "B", "C", "D", "E1", "E2")

# lower bounds, lower-inclusive; below the E2 floor lies class F/G territory
CLASS_LOWER_BOUNDS: tuple[tuple[str, float], ...] = (
    ("A", 40.0),
    ("B", 10.0),
    ("C", 4.0),
    ("D", 1.0),
    ("E1", 0.4),
    ("E2", 0.01),
)
Q_FLOOR = 0.01

CLASS_INTERVALS: dict[str, tuple[float, float]] = {
    "A": (40.0, math.inf),
    "B": (10.0, 40.0),
    "C": (4.0, 10.0),
    "D": (1.0, 4.0),
    "E1": (0.4, 1.0),
    "E2": (0.01, 0.4),
}


@dataclass(frozen=True)
class QComponents:
    """The six Q-system inputs plus the Jn multiplier near openings."""

    rqd: float
    jn: float
    jr: float
    ja: float
    jw: float
    srf: float
    jn_mult: float = 1.0

    def check(self) -> None:
        for name in ("rqd", "jn", "jr", "ja", "jw", "srf", "jn_mult"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise NonPositiveComponent(f"{name} must be a positive finite number, got {v!r}")
        if self.rqd > 100:
            raise OutOfRange(f"rqd must be <= 100, got {self.rqd!r}")


def compute_q_base(c: QComponents) -> float:
    """Q without the water / stress term: (RQD/Jn) * (Jr/Ja)."""
    c.check()
    return (c.rqd / c.jn) * (c.jr / c.ja)


def compute_q(c: QComponents) -> float:
    """Q = (RQD/Jn) * (Jr/Ja) * (Jw/SRF)."""
    return compute_q_base(c) * (c.jw / c.srf)


def q_to_class(q: float) -> QClass:
    if not (isinstance(q, (int, float)) and q > 0) or math.isnan(q):
        raise OutOfRange(f"Q must be positive, got {q!r}")
    for name, lo in CLASS_LOWER_BOUNDS:
        if q >= lo:
            return QClass(name)
    raise OutOfRange(f"Q={q!r} is below the class E floor ({Q_FLOOR}); classes F/G are not supported")


def class_rank(label: str) -> int:
    """Rock-quality rank, 0 = best (A). Grouped labels rank by their best member."""
    label = str(label)
    if label in FINE_CLASSES:
        return FINE_CLASSES.index(label)
    if label == "E":
        return FINE_CLASSES.index("E1")
    members = _label_members(label)
    if not members:
        raise ValueError(f"not a Q-class label: {label!r}")
    return min(FINE_CLASSES.index(m) for m in members)


_TOKEN = re.compile(r"E1|E2|E|A|B|C|D")


def _label_members(label: str) -> list[str]:
    out: list[str] = []
    pos = 0
    for m in _TOKEN.finditer(label):
        if m.start() != pos:
            return []
        pos = m.end()
        tok = m.group(0)
        out.extend(["E1", "E2"] if tok == "E" else [tok])
    if pos != len(label):
        return []
    return out


def canonical_order(labels: Iterable) -> list:
    """Sort labels best-to-worst rock.

    Labels that are not Q-class names sort after the class names, in their
    natural order when mutually comparable (so integer labels stay numeric)
    and by string form otherwise.
    """
    uniq = set(labels)
    known, other = [], []
    for lbl in uniq:
        try:
            known.append((class_rank(lbl), str(lbl), lbl))
        except ValueError:
            other.append(lbl)
    try:
        other.sort()
    except TypeError:
        other.sort(key=str)
    return [lbl for _, _, lbl in sorted(known, key=lambda t: t[:2])] + other


def normalize_scheme_name(name: str) -> str:
    return re.sub(r"\s+", "", name)


@dataclass(frozen=True)
class GroupingScheme:
    name: str
    mapping: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        missing = [c for c in FINE_CLASSES if c not in self.mapping]
        if missing:
            raise UnknownScheme(f"scheme {self.name!r} does not map classes {missing}")
        outputs = {v for v in self.mapping.values() if v != DROP}
        if len(outputs) < 2:
            raise UnknownScheme(f"scheme {self.name!r} needs at least two groups")

    @property
    def labels(self) -> list[str]:
        """Grouped labels in best-to-worst order."""
        return canonical_order(v for v in self.mapping.values() if v != DROP)

    def __call__(self, cls) -> str:
        return self.mapping[str(cls)]


def _scheme_from_groups(name: str) -> GroupingScheme:
    """Build a scheme from a name such as ``"AB, CD, E"``; unlisted classes drop."""
    mapping = {c: DROP for c in FINE_CLASSES}
    for group in name.split(","):
        group = group.strip()
        for member in _label_members(group):
            mapping[member] = group
    return GroupingScheme(name, mapping)


BUILTIN_SCHEMES: dict[str, GroupingScheme] = {
    normalize_scheme_name(n): _scheme_from_groups(n)
    for n in (
        "A, B, C, D, E1, E2",
        "A, B, C, D, E",
        "AB, C, D, E",
        "AB, CD, E",
        "ABCDE1, E2",
        "AB, CDE",
        "AB, DE",
        "A, C, E",
        "ABCD, E",
    )
}
IDENTITY_SCHEME = BUILTIN_SCHEMES["A,B,C,D,E1,E2"]


def get_scheme(scheme) -> GroupingScheme:
    if isinstance(scheme, GroupingScheme):
        return scheme
    key = normalize_scheme_name(str(scheme))
    try:
        return BUILTIN_SCHEMES[key]
    except KeyError:
        raise UnknownScheme(f"unknown grouping scheme {scheme!r}") from None


def load_schemes(text: str) -> dict[str, GroupingScheme]:
    """Parse ``{"name": {"A": "AB", ..., "C": "DROP"}}``."""
    raw = json.loads(text)
    if not isinstance(raw, dict):
        raise UnknownScheme("scheme document must be a JSON object")
    out = {}
    for name, mapping in raw.items():
        if not isinstance(mapping, dict):
            raise UnknownScheme(f"scheme {name!r} must map class -> label")
        out[name] = GroupingScheme(name, {str(k): str(v) for k, v in mapping.items()})
    return out


def apply_grouping(cls, scheme) -> str:
    """Grouped label for ``cls``, or ``DROP`` when the scheme excludes it."""
    s = get_scheme(scheme)
    cls = str(cls)
    if cls not in s.mapping:
        raise UnknownScheme(f"class {cls!r} is not covered by scheme {s.name!r}")
    return s.mapping[cls]


def group_counts(counts: Mapping[str, int], scheme) -> tuple[dict[str, int], int]:
    """Aggregate per-class counts under ``scheme``; returns (grouped, dropped)."""
    s = get_scheme(scheme)
    grouped: dict[str, int] = {lbl: 0 for lbl in s.labels}
    dropped = 0
    for cls, n in counts.items():
        g = apply_grouping(cls, s)
        if g == DROP:
            dropped += n
        else:
            grouped[g] += n
    return grouped, dropped


class ZoneTag(str, Enum):
    REGULAR = "Regular"
    TRANSITION = "Transition"

    def __str__(self) -> str:
        return self.value


def tag_transition_zones(
    samples: Sequence[tuple[float, str]], window_m: float = 10.0
) -> list[ZoneTag]:
    """Tag samples lying in the window that follows a class change.

    ``samples`` are ``(chainage_m, class)`` pairs for one tunnel, sorted by
    chainage. A sample at ``x`` is a transition sample when the most recent
    change point ``c <= x`` satisfies ``x - c < window_m``; the sample at the
    change point itself is always tagged.
    """
    if window_m < 0:
        raise ValueError("window_m must be non-negative")
    tags: list[ZoneTag] = []
    last_change = None
    prev_x = None
    prev_cls = None
    for x, cls in samples:
        x = float(x)
        if prev_x is not None and x < prev_x:
            raise UnsortedInput(f"chainage {x} follows {prev_x}")
        if prev_cls is not None and str(cls) != prev_cls:
            last_change = x
        if last_change is not None and (x == last_change or x - last_change < window_m):
            tags.append(ZoneTag.TRANSITION)
        else:
            tags.append(ZoneTag.REGULAR)
        prev_x = x
        prev_cls = str(cls)
    return tags
