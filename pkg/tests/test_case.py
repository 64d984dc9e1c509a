from __future__ import annotations

import dataclasses
import json

import pytest
from hypothesis import given, settings, strategies as st

from inertia_uc.case import (CaseParseError, CaseValidationError, case_from_dict, case_to_dict, dump_case,
                             load_case, res_energy_share, scale_penetration, validate_case)
from inertia_uc.desk import curated_suite, peaker_case, random_desk_case, trivial_case


def minimal_doc() -> dict:
    return {
        "schema_version": 1,
        "name": "one",
        "params": {"f0": 60, "fmax_prime": 0.5, "dfmax": 0.8, "Hmin": 1, "Psys": 10, "T": 1},
        "network": {"buses": [1], "lines": [], "slack_bus": 1},
        "sgs": [{"id": "G", "bus": 1, "a": 0, "b": 1, "c": 0, "s": 0, "Pmin": 0, "Pmax": 10, "RU": 10, "RD": 10,
                 "TU": 1, "TD": 1, "H": 3, "eps": 0.05}],
        "ess": [], "ress": [],
        "load": {"1": [5]},
    }


def test_minimal_case_loads(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(minimal_doc()))
    case = load_case(p)
    assert len(case.sgs) == 1 and case.T == 1
    assert case.bus_load(1, 0) == 5


@pytest.mark.parametrize("case", list(curated_suite().values()), ids=lambda c: c.name)
def test_round_trip(tmp_path, case):
    p = tmp_path / "case.json"
    dump_case(case, p)
    assert load_case(p) == case
    assert case_from_dict(json.loads(json.dumps(case_to_dict(case)))) == case


def test_pmin_above_pmax_names_unit():
    doc = minimal_doc()
    doc["sgs"][0]["Pmin"] = 20
    with pytest.raises(CaseValidationError, match=r"sgs\[0\]\(G\)\.Pmin"):
        case_from_dict(doc)


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{\"params\": ")
    with pytest.raises(CaseParseError):
        load_case(p)


def test_missing_section():
    doc = minimal_doc()
    del doc["network"]
    with pytest.raises(CaseParseError):
        case_from_dict(doc)


def test_shipped_118_bus_counts(data_dir):
    case = load_case(data_dir / "ieee118_mod.json")
    kinds = [r.kind for r in case.ress]
    assert (len(case.sgs), kinds.count("PV"), kinds.count("WT"), len(case.ess)) == (28, 8, 2, 10)
    assert len(case.network.buses) == 118
    assert case.inertia_requirement() == pytest.approx(44_280.0, rel=1e-6)


def test_scale_zero_clears_forecasts():
    case = scale_penetration(peaker_case(), 0.0)
    assert all(f == 0 for r in case.ress for f in r.forecast)


@pytest.mark.parametrize("eta", [0.05, 0.2, 0.4])
def test_scale_hits_share(eta):
    case = scale_penetration(peaker_case(), eta)
    assert res_energy_share(case) == pytest.approx(eta, rel=1e-9)


def test_scale_118_at_twenty_percent(data_dir):
    case = scale_penetration(load_case(data_dir / "ieee118_mod.json"), 0.2)
    assert abs(res_energy_share(case) - 0.2) <= 1e-6 * 0.2


def test_scale_is_idempotent_and_keeps_other_data():
    base = peaker_case()
    once = scale_penetration(base, 0.25)
    twice = scale_penetration(once, 0.25)
    assert twice == once
    assert once.sgs is base.sgs and once.ess is base.ess and once.network is base.network
    assert once.load == base.load


def test_scale_errors():
    with pytest.raises(ValueError):
        scale_penetration(peaker_case(), 1.0)
    with pytest.raises(ValueError, match="no RES"):
        scale_penetration(trivial_case(), 0.2)


# single-field mutations that break one invariant each
SG_MUTATIONS = [
    ("Pmin", lambda g: g.Pmax + 1.0),
    ("a", lambda g: -0.1),
    ("TU", lambda g: 0),
    ("TD", lambda g: 0),
    ("eps", lambda g: 0.5),
    ("eps", lambda g: 0.0),
    ("H", lambda g: -1.0),
    ("bus", lambda g: 999),
    ("u0", lambda g: 2),
]
ES_MUTATIONS = [
    ("k", lambda e: 0.0),
    ("k", lambda e: 1.5),
    ("e0", lambda e: e.Emax + 1.0),
    ("Emin", lambda e: -1.0),
    ("He_max", lambda e: -0.5),
]
RES_MUTATIONS = [
    ("forecast", lambda r: tuple(m + 1.0 for m in r.mppt)),
    ("err_std", lambda r: tuple(-1.0 for _ in r.err_std)),
    ("inertia_err_std", lambda r: tuple(-0.1 for _ in r.inertia_err_std)),
    ("mppt", lambda r: tuple(r.Pmax + 1.0 for _ in r.mppt)),
    ("forecast", lambda r: r.forecast[:-1]),
]


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 500), data=st.data())
def test_validation_rejects_single_field_mutations(seed, data):
    case = random_desk_case(seed, with_es=True)
    validate_case(case)
    group = data.draw(st.sampled_from(["sg", "es", "res"]))
    if group == "sg":
        k = data.draw(st.integers(0, len(case.sgs) - 1))
        field, fn = data.draw(st.sampled_from(SG_MUTATIONS))
        unit = dataclasses.replace(case.sgs[k], **{field: fn(case.sgs[k])})
        bad = dataclasses.replace(case, sgs=case.sgs[:k] + (unit,) + case.sgs[k + 1:])
        path = f"sgs[{k}]"
    elif group == "es":
        field, fn = data.draw(st.sampled_from(ES_MUTATIONS))
        bad = dataclasses.replace(case, ess=(dataclasses.replace(case.ess[0], **{field: fn(case.ess[0])}),))
        path = "ess[0]"
    else:
        field, fn = data.draw(st.sampled_from(RES_MUTATIONS))
        bad = dataclasses.replace(case, ress=(dataclasses.replace(case.ress[0], **{field: fn(case.ress[0])}),))
        path = "ress[0]"
    with pytest.raises(CaseValidationError) as err:
        validate_case(bad)
    assert path in str(err.value)


def test_load_length_checked():
    doc = minimal_doc()
    doc["load"] = {"1": [5, 6]}
    with pytest.raises(CaseValidationError, match="load"):
        case_from_dict(doc)
