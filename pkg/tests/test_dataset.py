from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rockmass.dataset import (
    MWD_PARAMETERS,
    BlastingRound,
    ColumnMap,
    TunnelDataset,
    load_dataset,
    parse_drillholes,
    parse_rounds,
    serialize_drillholes,
    serialize_rounds,
    validate,
    write_dataset,
)
from rockmass.errors import BadValue, MissingColumn, OrphanHole
from rockmass.synth import SynthSpec, generate

ROUNDS_CSV = b"""round_id,tunnel_id,start_chainage_m,length_m,overburden_m,tunnel_width_m,jn_mult,q_value,rqd,jn,jr,ja,jw,srf
R1,T1,0,2,50,10,1,,90,9,2,1,1,1
R2,T1,2,2,55,10,1,3.5,,,,,,
"""

HEADER = "hole_id,round_id,depth_m," + ",".join(MWD_PARAMETERS)


def _holes_csv(rows):
    lines = [HEADER] + [",".join(str(v) for v in r) for r in rows]
    return ("\n".join(lines) + "\n").encode()


def _fixture_rows():
    rows = []
    for rid, holes in (("R1", ("H1", "H2")), ("R2", ("H3", "H4"))):
        for h in holes:
            for d in (0.25, 0.75, 1.25, 1.75):
                rows.append([h, rid, d] + [round(d + k, 2) for k in range(8)])
    return rows


def test_parse_fixture():
    ds = parse_drillholes(_holes_csv(_fixture_rows()), ROUNDS_CSV)
    assert len(ds.rounds) == 2
    assert {str(h) for b in ds.holes.values() for h in b.hole_ids} == {"H1", "H2", "H3", "H4"}
    assert ds.n_records == 16
    assert ds.provenance.counts.rows_in == 16 and ds.provenance.counts.records_out == 16
    r1 = ds.round("R1")
    assert r1.q() == pytest.approx(20.0) and r1.q_base() == pytest.approx(20.0)
    assert ds.round("R2").q() == 3.5 and ds.round("R2").q_base() is None
    recs = list(ds.records("R1"))
    assert [r.hole_id for r in recs[:4]] == ["H1"] * 4
    assert [r.depth_m for r in recs[:4]] == [0.25, 0.75, 1.25, 1.75]


def test_nan_sensor_value_names_row_and_column():
    rows = _fixture_rows()
    rows[5][3 + MWD_PARAMETERS.index("water_flow_norm")] = "NaN"
    with pytest.raises(BadValue) as exc:
        parse_drillholes(_holes_csv(rows), ROUNDS_CSV)
    assert exc.value.row == 6 and exc.value.column == "water_flow_norm"


def test_orphan_hole():
    rows = _fixture_rows() + [["H9", "R7", 0.1] + [1] * 8]
    with pytest.raises(OrphanHole) as exc:
        parse_drillholes(_holes_csv(rows), ROUNDS_CSV)
    assert exc.value.round_id == "R7"


def test_missing_column():
    csv_bytes = _holes_csv(_fixture_rows()).replace(b"penetr_rms", b"something_else")
    with pytest.raises(MissingColumn):
        parse_drillholes(csv_bytes, ROUNDS_CSV)
    with pytest.raises(MissingColumn):
        parse_rounds(b"round_id,tunnel_id,start_chainage_m,length_m,overburden_m,tunnel_width_m\nR1,T,0,1,1,1\n")


def test_duplicate_depth_rejected():
    rows = _fixture_rows()
    rows.insert(1, list(rows[0]))
    with pytest.raises(BadValue):
        parse_drillholes(_holes_csv(rows), ROUNDS_CSV)


def test_skip_mode_accounts_for_every_row():
    rows = _fixture_rows()
    rows[2][4] = "oops"
    rows.append(["H9", "R7", 0.1] + [1] * 8)
    ds = parse_drillholes(_holes_csv(rows), ROUNDS_CSV, on_error="skip")
    c = ds.provenance.counts
    assert c.rows_in == 17
    assert c.records_out + len(c.rejected) == c.rows_in
    assert len(c.rejected) == 2 and ds.n_records == 15


def test_column_map():
    rows = _fixture_rows()
    csv_bytes = _holes_csv(rows).replace(b"hole_id", b"HoleNo").replace(b"penetr_norm", b"PenetrNorm")
    params = {p: p for p in MWD_PARAMETERS}
    params["penetr_norm"] = "PenetrNorm"
    ds = parse_drillholes(csv_bytes, ROUNDS_CSV, ColumnMap(hole_id="HoleNo", parameters=params))
    assert ds == parse_drillholes(_holes_csv(rows), ROUNDS_CSV)


def test_stream_sources():
    ds = load_dataset(io.BytesIO(_holes_csv(_fixture_rows())), io.BytesIO(ROUNDS_CSV))
    assert ds.n_records == 16


def test_synthetic_round_trip(tmp_path):
    ds = generate(SynthSpec(n_rounds=100, seed=11)).dataset
    holes, rounds = write_dataset(ds, tmp_path)
    back = load_dataset(holes, rounds)
    assert back == ds
    assert back.rounds == ds.rounds
    for r in ds.rounds:
        assert back.readings(r.round_id) == ds.readings(r.round_id)
    # canonical form: a second cycle is byte-identical
    assert serialize_drillholes(back) == serialize_drillholes(ds)
    assert serialize_rounds(back) == serialize_rounds(ds)


finite = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=30)
@given(st.lists(st.lists(finite, min_size=8, max_size=8), min_size=1, max_size=12), st.floats(0.1, 100))
def test_round_trip_property(vals, q):
    rounds = [BlastingRound("R1", "T1", 0.0, float(len(vals)), 30.0, 9.5, 1.0, None, q)]
    rows = [["H1", "R1", float(i) * 0.5] + v for i, v in enumerate(vals)]
    ds = parse_drillholes(_holes_csv([[repr(x) if isinstance(x, float) else x for x in r] for r in rows]), rounds)
    back = parse_drillholes(serialize_drillholes(ds), parse_rounds(serialize_rounds(ds)))
    assert back == ds
    assert np.array_equal(back.readings("R1").values, np.array(vals))


def test_validate_clean_synthetic(small_tunnel):
    report = validate(small_tunnel.dataset)
    assert report.ok and report.findings == ()
    assert all(report.checks.values())


def test_validate_overlap_and_unlabeled():
    ds = parse_drillholes(_holes_csv(_fixture_rows()), ROUNDS_CSV)
    r1, r2 = ds.rounds
    bad = TunnelDataset(
        (r1, BlastingRound("R2", "T1", 1.5, 2.0, 55, 10)),
        dict(ds.holes),
    )
    report = validate(bad)
    by_check = {f.check: f for f in report.findings}
    assert set(by_check["overlap"].ids) == {"R1", "R2"}
    assert by_check["unlabeled round"].ids == ("R2",)
    assert not report.checks["overlap"]


def test_validate_does_not_mutate():
    ds = parse_drillholes(_holes_csv(_fixture_rows()), ROUNDS_CSV)
    before = serialize_drillholes(ds) + serialize_rounds(ds)
    validate(ds)
    assert serialize_drillholes(ds) + serialize_rounds(ds) == before


def test_validate_q_mismatch_and_missing_readings():
    ds = parse_drillholes(_holes_csv(_fixture_rows()), ROUNDS_CSV)
    r1 = ds.rounds[0]
    r1_bad = BlastingRound(r1.round_id, r1.tunnel_id, 0.0, 2.0, 50, 10, 1.0, r1.q_components, 7.0)
    r3 = BlastingRound("R3", "T1", 4.0, 2.0, 50, 10, 1.0, None, 1.0)
    report = validate(TunnelDataset((r1_bad, ds.rounds[1], r3), dict(ds.holes)))
    checks = {f.check for f in report.findings}
    assert checks == {"q mismatch", "round without readings"}
