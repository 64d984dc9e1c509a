from __future__ import annotations

import dataclasses
import json

import numpy as np
import pytest

from conftest import solved
from inertia_uc.case import EsUnit, Network, SystemCase
from inertia_uc.desk import _params, congested_case, curated_suite, random_desk_case, trivial_case
from inertia_uc.model import ModelOptions, build_model, system_inertia
from inertia_uc.solver import (SOLUTION_KEYS, DecisionSchedule, InfeasibleError, solution_dump, solve_auto,
                               solve_ccuc, solve_ccuc_milp, solve_fixed_qp, solve_relaxation)
from inertia_uc.uncertainty import aggregate_errors, expected_sg_cost
from oracles import brute_force_ccuc, fixed_commitment_qp

CURATED = list(curated_suite())


def test_census_single_unit():
    census = build_model(trivial_case()).census
    expected = {"logic": 2, "ramp": 2, "capacity": 4, "balance": 2, "reserve": 2, "inertia": 2}
    assert {k: census[k] for k in expected} == expected


def test_census_without_inertia():
    assert build_model(trivial_case(), options=ModelOptions(inertia=False)).census["inertia"] == 0


def _es_only() -> SystemCase:
    es = EsUnit(id="E1", bus=1, Pe_max=50.0, Pc_max=50.0, Emin=0.0, Emax=200.0, k=0.9, He_max=4.0, e0=150.0,
                eps_d=0.05, eps_c=0.05)
    return SystemCase(params=_params(3, Psys=100.0, Hmin=1.0), network=Network((1,), (), 1), sgs=(), ess=(es,),
                      ress=(), load={1: (10.0, 20.0, 10.0)}, name="es-only")


def test_es_only_census_and_solve():
    pr = build_model(_es_only())
    assert pr.census["logic"] == 0 and pr.census["soc"] == 3
    s = solve_ccuc(pr)
    sched, _ = solve_fixed_qp(pr, s.u)
    assert np.allclose(sched.Pd - sched.Pc, [[10.0, 20.0, 10.0]], atol=1e-6)


def test_dimension_mismatch():
    case = trivial_case()
    bad = dataclasses.replace(case, load={1: (50.0,)})
    with pytest.raises(ValueError):
        build_model(bad)


def test_single_unit_serves_load():
    case, pr, sched, duals = solved("trivial")
    assert np.all(sched.u == 1)
    assert np.allclose(sched.P[0], case.load[1], atol=1e-6)
    agg = aggregate_errors(case)
    want = sum(expected_sg_cost(case.sgs[0], sched.P[0, t], sched.alpha[0, t], 1, 0, agg.Mrt[t], agg.Srt[t])
               for t in range(case.T))
    assert sched.objective == pytest.approx(want, rel=1e-9)


def test_trivial_energy_price_is_marginal_cost():
    case, _, sched, duals = solved("trivial")
    sg = case.sgs[0]
    assert np.allclose(duals.lambda_[0], 2 * sg.a * sched.P[0] + sg.b, atol=1e-6)


def test_congestion_separates_prices():
    case, _, sched, duals = solved("congested")
    assert np.all(np.abs(duals.lambda_[0] - duals.lambda_[1]) > 1.0)


@pytest.mark.parametrize("seed", range(6))
def test_brute_force_small(seed):
    pr = build_model(random_desk_case(seed))
    best, _ = brute_force_ccuc(pr)
    got = solve_ccuc(pr, gap=1e-9)
    assert got.objective == pytest.approx(best, rel=1e-6)


@pytest.mark.parametrize("name", CURATED)
def test_fixed_qp_matches_external_qp(name):
    _, pr, sched, _ = solved(name)
    assert fixed_commitment_qp(pr, sched.u) == pytest.approx(sched.objective, rel=1e-6)


@pytest.mark.parametrize("name", CURATED)
def test_relaxation_is_lower_bound(name):
    _, pr, sched, _ = solved(name)
    assert solve_relaxation(pr).objective <= sched.objective + 1e-6 * abs(sched.objective)


@pytest.mark.parametrize("name", CURATED)
def test_reserve_shares_sum_to_one(name):
    _, _, sched, _ = solved(name)
    total = sched.alpha.sum(axis=0) + sched.ad.sum(axis=0) - sched.ac.sum(axis=0)
    assert np.allclose(total, 1.0, atol=1e-8)


def test_soc_telescopes():
    case, pr, sched, _ = solved("storage-inertia")
    M = aggregate_errors(case).Mrt
    for e, es in enumerate(case.ess):
        flow = es.k * (sched.Pc[e] + M * sched.ac[e]) - (sched.Pd[e] + M * sched.ad[e]) / es.k
        assert abs(sched.e[e, -1] - (es.e0 + flow.sum())) <= 1e-8 * max(1.0, es.Emax)


@pytest.mark.parametrize("name", CURATED)
def test_inertia_row_holds(name):
    case, pr, sched, _ = solved(name)
    req = case.inertia_requirement()
    for t in range(case.T):
        assert system_inertia(case, pr.margins, sched.u, sched.He, t) >= req - 1e-6 * req


def test_base_run_falls_short_on_peaker():
    case, pr, sched, _ = solved("peaker", inertia=False)
    short = [t for t in range(case.T) if system_inertia(case, pr.margins, sched.u, sched.He, t)
             < case.inertia_requirement() - 1e-6]
    assert short


def test_infeasible_reports_family():
    case = trivial_case()
    bad = dataclasses.replace(case, load={1: (50.0, 500.0)})
    with pytest.raises(InfeasibleError) as err:
        solve_ccuc(build_model(bad))
    assert err.value.family is not None


def test_fixed_commitment_infeasible():
    _, pr, _, _ = solved("peaker")
    with pytest.raises(InfeasibleError):
        solve_fixed_qp(pr, np.zeros_like(pr.var["u"], dtype=float))


def test_node_budget_marks_suboptimal():
    pr = build_model(random_desk_case(3))
    s = solve_ccuc(pr, gap=0.0, node_limit=1)
    assert s.status in ("suboptimal", "optimal")


def test_milp_path_agrees_on_curated():
    _, pr, sched, _ = solved("peaker")
    m = solve_ccuc_milp(pr)
    assert m.objective == pytest.approx(sched.objective, rel=1e-4)
    assert solve_auto(pr, method="milp").objective == pytest.approx(m.objective)


def test_solution_dump_round_trip():
    _, pr, sched, duals = solved("peaker")
    doc = json.loads(json.dumps(solution_dump(pr, sched, duals)))
    assert tuple(sorted(doc)) == tuple(sorted(SOLUTION_KEYS))
    back = DecisionSchedule.from_dict(doc["schedule"])
    assert np.array_equal(back.u, sched.u) and np.array_equal(back.P, sched.P)
    assert doc["census"]["inertia"] == 4


def test_deterministic():
    pr = build_model(random_desk_case(5))
    a, b = solve_ccuc(pr), solve_ccuc(pr)
    assert a.objective == b.objective and np.array_equal(a.u, b.u) and a.node_count == b.node_count


def test_congested_case_is_not_trivially_uniform():
    # sanity on the fixture itself: the tie line is at its limit
    case = congested_case()
    _, _, sched, _ = solved("congested")
    flow = case.params.base_mva * case.network.lines[0].B * (sched.theta[0] - sched.theta[1])
    assert np.allclose(np.abs(flow), case.network.lines[0].Fmax, atol=1e-5)
