"""Synthetic tunnels with planted, class-conditional MWD structure.

A tunnel is a sequence of blasting rounds whose Q-classes follow a
first-order chain: with probability ``p_stay`` a round keeps the previous
class, otherwise the class is redrawn from ``class_probs`` (so
``class_probs`` is the stationary distribution). Every reading is

    value = blended class mean + round effect + hole effect + reading noise

After a class change the mean moves linearly from its value at the change
point to the new class mean over ``smoothing_m`` metres downstream; the
reading spread (class-specific) is blended the same way. Q-values are drawn
log-uniformly strictly inside the class interval and factorized into
plausible Q-system components.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from rockmass.dataset import (
    MWD_PARAMETERS,
    BlastingRound,
    Provenance,
    RoundReadings,
    TunnelDataset,
    write_dataset,
)
from rockmass.errors import BadSpec, NotSynthetic
from rockmass.qsystem import FINE_CLASSES, QComponents, compute_q, q_to_class

# Round counts per class in the reference tunnel collection; used as the
# default stationary distribution so B and C dominate and A / E2 are rare.
REFERENCE_ROUND_COUNTS = {"A": 101, "B": 1818, "C": 1712, "D": 537, "E1": 167, "E2": 67}
DEFAULT_CLASS_PROBS = tuple(REFERENCE_ROUND_COUNTS[c] / 4402 for c in FINE_CLASSES)

# Rows A..E2, columns in MWD_PARAMETERS order. Penetration falls and the
# RMS / water-flow responses rise as the rock gets weaker; feed and hammer
# pressure carry only a weak signal.
DEFAULT_CLASS_MEANS = (
    (1.00, 0.20, 0.50, 0.10, 0.60, 0.70, 0.40, 0.05),
    (0.85, 0.25, 0.55, 0.12, 0.60, 0.70, 0.45, 0.07),
    (0.70, 0.32, 0.62, 0.16, 0.58, 0.69, 0.50, 0.10),
    (0.50, 0.42, 0.70, 0.22, 0.55, 0.67, 0.60, 0.15),
    (0.30, 0.55, 0.80, 0.30, 0.50, 0.64, 0.75, 0.22),
    (0.15, 0.65, 0.85, 0.38, 0.48, 0.62, 0.85, 0.30),
)
# reading-noise multiplier per class: weaker rock gives noisier signals
DEFAULT_CLASS_SPREAD = (0.8, 0.9, 1.0, 1.15, 1.3, 1.5)


def _default_covariance() -> tuple:
    sd = np.full(len(MWD_PARAMETERS), 0.1)
    corr = 0.7 * np.eye(len(MWD_PARAMETERS)) + 0.3
    return tuple(map(tuple, (sd[:, None] * corr * sd[None, :]).tolist()))


# Q sampling ranges; the open-ended classes are capped at the range seen in practice
Q_SAMPLING_RANGE = {
    "A": (40.0, 150.0),
    "B": (10.0, 40.0),
    "C": (4.0, 10.0),
    "D": (1.0, 4.0),
    "E1": (0.4, 1.0),
    "E2": (0.1, 0.4),
}

_JN = (0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 9.0, 12.0, 15.0, 20.0)
_JR = (0.5, 1.0, 1.5, 2.0, 3.0, 4.0)
_JA = (0.75, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0)
_JW = (1.0, 1.0, 1.0, 0.66, 0.5)
_SRF = (1.0, 1.0, 1.0, 2.5, 5.0)


@dataclass(frozen=True)
class SynthSpec:
    n_rounds: int = 2000
    round_length_m: tuple[float, float] = (3.0, 7.0)
    p_stay: float = 0.9
    class_probs: tuple[float, ...] = DEFAULT_CLASS_PROBS
    class_means: tuple = DEFAULT_CLASS_MEANS
    class_spread: tuple[float, ...] = DEFAULT_CLASS_SPREAD
    covariance: tuple = field(default_factory=_default_covariance)
    noise_scale: float = 1.0
    round_effect: float = 0.6
    hole_effect: float = 0.3
    smoothing_m: float = 10.0
    holes_per_round: int = 8
    readings_per_m: float = 8.0
    n_tunnels: int = 2
    seed: int = 0

    def validate(self) -> None:
        P = len(MWD_PARAMETERS)
        C = len(FINE_CLASSES)
        if not isinstance(self.n_rounds, (int, np.integer)) or self.n_rounds < 1:
            raise BadSpec("n_rounds must be a positive integer")
        lo, hi = self.round_length_m
        if not (0 < lo <= hi):
            raise BadSpec("round_length_m must satisfy 0 < low <= high")
        if not 0.0 <= self.p_stay <= 1.0:
            raise BadSpec("p_stay must lie in [0, 1]")
        p = np.asarray(self.class_probs, dtype=float)
        if p.shape != (C,) or np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-9):
            raise BadSpec("class_probs must be 6 non-negative numbers summing to 1")
        if np.asarray(self.class_means, dtype=float).shape != (C, P):
            raise BadSpec(f"class_means must have shape ({C}, {P})")
        s = np.asarray(self.class_spread, dtype=float)
        if s.shape != (C,) or np.any(s <= 0):
            raise BadSpec("class_spread must be 6 positive numbers")
        cov = np.asarray(self.covariance, dtype=float)
        if cov.shape != (P, P) or not np.allclose(cov, cov.T):
            raise BadSpec("covariance must be a symmetric 8x8 matrix")
        if np.linalg.eigvalsh(cov)[0] < -1e-12:
            raise BadSpec("covariance must be positive semi-definite")
        for name in ("noise_scale", "round_effect", "hole_effect", "smoothing_m"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise BadSpec(f"{name} must be a non-negative number")
        if self.holes_per_round < 1:
            raise BadSpec("holes_per_round must be >= 1")
        if not self.readings_per_m >= 1:
            raise BadSpec("readings_per_m must be >= 1 so every 1 m section has readings")
        if not 1 <= self.n_tunnels <= self.n_rounds:
            raise BadSpec("n_tunnels must lie in [1, n_rounds]")

    def to_dict(self) -> dict:
        return {
            k: (list(map(list, v)) if k in ("class_means", "covariance") else list(v) if isinstance(v, tuple) else v)
            for k, v in self.__dict__.items()
        }

    @classmethod
    def from_dict(cls, d) -> "SynthSpec":
        kw = dict(d)
        for k in ("class_means", "covariance"):
            if k in kw:
                kw[k] = tuple(tuple(r) for r in kw[k])
        for k in ("round_length_m", "class_probs", "class_spread"):
            if k in kw:
                kw[k] = tuple(kw[k])
        unknown = set(kw) - set(cls.__dataclass_fields__)
        if unknown:
            raise BadSpec(f"unknown synth option(s): {sorted(unknown)}")
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Planted per-section truth, aligned with ``features.build_sections`` order."""

    tunnel_id: np.ndarray
    round_id: np.ndarray
    section_start_m: np.ndarray
    planted_class: np.ndarray
    q_value: np.ndarray
    blend: np.ndarray  # share of the round's own class mean at the section midpoint
    mean: np.ndarray  # (n, 8) blended mean at the section midpoint

    def __len__(self) -> int:
        return len(self.round_id)


@dataclass(frozen=True, eq=False)
class SyntheticTunnel:
    dataset: TunnelDataset
    truth: GroundTruth
    spec: SynthSpec
    round_class: dict


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, *key])


def _class_chain(spec: SynthSpec, n: int, rng) -> list[int]:
    p = np.asarray(spec.class_probs, dtype=float)
    out = []
    cur = None
    for _ in range(n):
        if cur is None or rng.random() >= spec.p_stay:
            cur = int(rng.choice(len(p), p=p))
        out.append(cur)
    return out


def sample_q(cls: str, rng) -> float:
    lo, hi = Q_SAMPLING_RANGE[cls]
    # strictly inside the interval, away from boundary rounding
    a, b = math.log(lo), math.log(hi)
    margin = 1e-6 * (b - a)
    return float(math.exp(rng.uniform(a + margin, b - margin)))


def factor_q(q: float, rng, jn_mult: float = 1.0) -> QComponents:
    """Q-system components whose product reproduces ``q`` (RQD in (0, 100], Jw/SRF <= 1)."""
    for _ in range(200):
        jn, jr, ja = rng.choice(_JN), rng.choice(_JR), rng.choice(_JA)
        jw, srf = rng.choice(_JW), rng.choice(_SRF)
        rqd = q * jn * ja * srf / (jr * jw)
        if 10.0 <= rqd <= 100.0:
            return QComponents(float(rqd), float(jn), float(jr), float(ja), float(jw), float(srf), jn_mult)
    jn, jr, ja, jw, srf = 0.5, 4.0, 0.75, 1.0, 1.0
    return QComponents(q * jn * ja * srf / (jr * jw), jn, jr, ja, jw, srf, jn_mult)


def _q4(x: np.ndarray) -> np.ndarray:
    """Fixed four-decimal precision so serialized values are platform independent."""
    return np.round(x, 4) + 0.0


def generate(spec: SynthSpec = SynthSpec()) -> SyntheticTunnel:
    spec.validate()
    P = len(MWD_PARAMETERS)
    means = np.asarray(spec.class_means, dtype=float)
    log_spread = np.log(np.asarray(spec.class_spread, dtype=float))
    cov = np.asarray(spec.covariance, dtype=float) * spec.noise_scale ** 2
    # eigen factor works for singular (PSD) covariance too
    w, V = np.linalg.eigh(cov)
    L = V * np.sqrt(np.clip(w, 0, None))

    chain_rng = _rng(spec.seed, 1, 0)
    classes = _class_chain(spec, spec.n_rounds, chain_rng)
    per_tunnel = np.array_split(np.arange(spec.n_rounds), spec.n_tunnels)

    rounds: list[BlastingRound] = []
    holes: dict[str, RoundReadings] = {}
    round_class: dict[str, str] = {}
    t_rows: list[tuple] = []
    for t, idx in enumerate(per_tunnel):
        tunnel_id = f"T{t + 1:02d}"
        geo_rng = _rng(spec.seed, 2, t)
        width = float(geo_rng.choice((8.5, 10.0, 12.5)))
        overburden = float(geo_rng.uniform(20.0, 200.0))
        chainage = 0.0
        prev_cls = None
        # state of the current blend segment: change point, source, target
        seg_c, seg_src, seg_dst = 0.0, None, None
        for i in idx:
            i = int(i)
            r_rng = _rng(spec.seed, 0, i)
            c = classes[i]
            cls = FINE_CLASSES[c]
            length = float(np.round(r_rng.uniform(*spec.round_length_m), 2))
            target = np.concatenate([means[c], [log_spread[c]]])
            if prev_cls is None:
                seg_c, seg_src, seg_dst = chainage, target, target
            elif c != prev_cls:
                src = _blend_at(chainage, seg_c, seg_src, seg_dst, spec.smoothing_m)
                seg_c, seg_src, seg_dst = chainage, src, target
            prev_cls = c

            overburden = max(0.0, overburden + float(r_rng.normal(0.0, 2.0)))
            jn_mult = float(r_rng.choice((1.5, 2.0))) if r_rng.random() < 0.05 else 1.0
            q = sample_q(cls, r_rng)
            comps = factor_q(q, r_rng, jn_mult)
            round_id = f"{tunnel_id}-R{i + 1:05d}"
            rnd = BlastingRound(
                round_id=round_id,
                tunnel_id=tunnel_id,
                start_chainage_m=round(chainage, 2),
                length_m=length,
                overburden_m=round(overburden, 2),
                tunnel_width_m=width,
                jn_mult=jn_mult,
                q_components=comps,
            )
            rounds.append(rnd)
            round_class[round_id] = cls

            n_read = int(math.floor(length * spec.readings_per_m))
            offsets = r_rng.uniform(0.05, 0.95, size=spec.holes_per_round)
            depth = (np.arange(n_read)[None, :] + offsets[:, None]) / spec.readings_per_m
            depth = _q4(depth).ravel()
            x = rnd.start_chainage_m + depth
            blended = _blend_at(x, seg_c, seg_src, seg_dst, spec.smoothing_m)
            mu, spread = blended[:, :P], np.exp(blended[:, P])
            round_eff = (L @ r_rng.standard_normal(P)) * spec.round_effect
            hole_eff = (r_rng.standard_normal((spec.holes_per_round, P)) @ L.T) * spec.hole_effect
            noise = (r_rng.standard_normal((len(depth), P)) @ L.T) * spread[:, None]
            values = mu + round_eff + np.repeat(hole_eff, n_read, axis=0) + noise
            hole_ids = np.repeat(np.array([f"{round_id}-H{h + 1:03d}" for h in range(spec.holes_per_round)], dtype=object), n_read)
            holes[round_id] = RoundReadings(hole_ids, depth, _q4(values))

            for s in range(int(math.floor(length + 1e-9))):
                mid = rnd.start_chainage_m + s + 0.5
                b = 1.0 if spec.smoothing_m == 0 else min(1.0, max(0.0, (mid - seg_c) / spec.smoothing_m))
                if np.array_equal(seg_src, seg_dst):
                    b = 1.0
                m = _blend_at(mid, seg_c, seg_src, seg_dst, spec.smoothing_m)[:P]
                t_rows.append((tunnel_id, round_id, rnd.start_chainage_m + s, cls, compute_q(comps), b, m))
            chainage = round(chainage + length, 2)

    truth = GroundTruth(
        tunnel_id=np.array([r[0] for r in t_rows], dtype=object),
        round_id=np.array([r[1] for r in t_rows], dtype=object),
        section_start_m=np.array([r[2] for r in t_rows], dtype=float),
        planted_class=np.array([r[3] for r in t_rows], dtype=object),
        q_value=np.array([r[4] for r in t_rows], dtype=float),
        blend=np.array([r[5] for r in t_rows], dtype=float),
        mean=np.array([r[6] for r in t_rows], dtype=float).reshape(len(t_rows), P),
    )
    ds = TunnelDataset(tuple(rounds), holes, Provenance(f"synth:seed={spec.seed}", "synthetic"))
    return SyntheticTunnel(ds, truth, spec, round_class)


def _blend_at(x, c, src, dst, width):
    """Linear blend from ``src`` at chainage ``c`` to ``dst`` over ``width`` metres."""
    x = np.asarray(x, dtype=float)
    if width <= 0:
        f = np.ones_like(x)
    else:
        f = np.clip((x - c) / width, 0.0, 1.0)
    return src + np.multiply.outer(f, dst - src)


def oracle_labels(tunnel) -> np.ndarray:
    """Planted class per section, independent of the Q-value pathway."""
    if not isinstance(tunnel, SyntheticTunnel):
        raise NotSynthetic("oracle labels exist only for generated tunnels")
    return tunnel.truth.planted_class.copy()


def serialize_ground_truth(truth: GroundTruth) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tunnel_id", "round_id", "section_start_m", "planted_class", "q_value", "blend"])
    for i in range(len(truth)):
        w.writerow(
            [truth.tunnel_id[i], truth.round_id[i], repr(float(truth.section_start_m[i])), truth.planted_class[i],
             repr(float(truth.q_value[i])), repr(float(truth.blend[i]))]
        )
    return buf.getvalue().encode("utf-8")


def write_synthetic(tunnel: SyntheticTunnel, directory) -> list[Path]:
    out = Path(directory)
    paths = list(write_dataset(tunnel.dataset, out))
    gt = out / "ground_truth.csv"
    gt.write_bytes(serialize_ground_truth(tunnel.truth))
    return paths + [gt]


# ---------------------------------------------------------------- Bayes-error oracle


def section_bayes_error(tunnel: SyntheticTunnel, n_draws: int = 200, seed: int = 0) -> np.ndarray:
    """Monte Carlo error of the Bayes classifier on section-mean vectors.

    The reference classifier knows the unsmoothed model: class ``c`` yields
    section means ``N(mu_c, S)`` with ``S`` the round-effect covariance plus
    the averaged hole and reading noise. Each section's actual mean (blended
    near a change) is perturbed ``n_draws`` times; the returned value is the
    share of draws the reference classifier assigns to a class other than the
    planted one. Sections in transition windows sit between class means and
    so get larger errors.
    """
    spec = tunnel.spec
    P = len(MWD_PARAMETERS)
    cov = np.asarray(spec.covariance, dtype=float) * spec.noise_scale ** 2
    n_per_section = spec.holes_per_round * spec.readings_per_m
    S = cov * (spec.round_effect ** 2 + spec.hole_effect ** 2 / spec.holes_per_round + 1.0 / n_per_section)
    S = S + 1e-12 * np.eye(P)
    Sinv = np.linalg.inv(S)
    Lc = np.linalg.cholesky(S)
    means = np.asarray(spec.class_means, dtype=float)
    logprior = np.log(np.clip(np.asarray(spec.class_probs, dtype=float), 1e-300, None))
    rng = np.random.default_rng(seed)
    truth = tunnel.truth
    true_idx = np.array([FINE_CLASSES.index(c) for c in truth.planted_class])
    err = np.empty(len(truth))
    for i in range(len(truth)):
        draws = truth.mean[i] + rng.standard_normal((n_draws, P)) @ Lc.T
        d = draws[:, None, :] - means[None, :, :]
        maha = np.einsum("ncp,pq,ncq->nc", d, Sinv, d)
        pred = np.argmax(logprior[None, :] - 0.5 * maha, axis=1)
        err[i] = np.mean(pred != true_idx[i])
    return err
