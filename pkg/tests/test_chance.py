from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import solved
from inertia_uc.chance import monte_carlo_chance_check
from inertia_uc.desk import curated_suite, peaker_case, random_desk_case
from inertia_uc.model import build_model
from inertia_uc.solver import DecisionSchedule, solve_ccuc, solve_fixed_qp
from inertia_uc.uncertainty import compute_margins, norm_cdf, zero_margins

N = 20_000


def hand_schedule(case, P, alpha, u=None) -> DecisionSchedule:
    nG, nE, T = len(case.sgs), len(case.ess), case.T
    z = lambda n: np.zeros((n, T))  # noqa: E731
    return DecisionSchedule(
        u=np.ones((nG, T)) if u is None else u, v=z(nG), w=z(nG), P=np.asarray(P, float), alpha=np.asarray(alpha, float),
        Pd=z(nE), Pc=z(nE), ad=z(nE), ac=z(nE), He=z(nE), e=z(nE), theta=np.zeros((len(case.network.buses), T)),
        objective=0.0)


def test_small_sample_rejected():
    case, _, sched, _ = solved("peaker")
    with pytest.raises(ValueError):
        monte_carlo_chance_check(case, sched, N=5_000)


def test_no_recourse_exposure_is_always_satisfied():
    case = peaker_case()
    sched = hand_schedule(case, P=[[250.0] * 4, [50.0] * 4], alpha=np.zeros((2, 4)))
    rates = monte_carlo_chance_check(case, sched, N=N, families=("sg_upper", "sg_lower"))
    assert rates["sg_upper"].min_rate == 1.0 and rates["sg_lower"].min_rate == 1.0


@pytest.mark.parametrize("name", list(curated_suite()))
def test_curated_solutions_meet_targets(name):
    case, pr, sched, _ = solved(name)
    rates = monte_carlo_chance_check(case, sched, pr.margins, N=N, seed=1)
    for fam, r in rates.items():
        assert r.ok, (fam, r.flagged[:3])


@pytest.mark.parametrize("seed", [0, 4, 9])
def test_random_solutions_meet_targets(seed):
    case = random_desk_case(seed, with_es=True)
    pr = build_model(case)
    sched, _ = solve_fixed_qp(pr, solve_ccuc(pr).u)
    assert all(r.ok for r in monte_carlo_chance_check(case, sched, pr.margins, N=N, seed=seed).values())


def _upper_bound_schedule(case, margin, a=0.5):
    sg = case.sgs[0]
    P = np.array([[sg.Pmax - margin * a] * case.T, [0.0] * case.T])
    u = np.array([[1.0] * case.T, [0.0] * case.T])
    alpha = np.array([[a] * case.T, [0.0] * case.T])
    return hand_schedule(case, P, alpha, u)


def test_zero_margins_rate_matches_normal_probability():
    case = peaker_case()  # aggregate error N(0.5, 1)
    sched = _upper_bound_schedule(case, zero_margins(case).g_up[0, 0])
    r = monte_carlo_chance_check(case, sched, N=200_000, seed=2, families=("sg_upper",))["sg_upper"]
    want = norm_cdf(-0.5 / 1.0)  # P[Omega <= 0]
    assert r.min_rate == pytest.approx(want, abs=4 * math.sqrt(want * (1 - want) / 200_000))
    assert not r.ok


@pytest.mark.parametrize("convention,expected", [("exact", norm_cdf(1.6448536269514722)),
                                                 ("literal", norm_cdf(1.6448536269514722 - 1.0))])
def test_margin_convention_on_a_binding_upper_row(convention, expected):
    """A unit sitting exactly on its deterministic upper row under each margin form."""
    case = peaker_case()
    m = compute_margins(case, convention=convention)
    sched = _upper_bound_schedule(case, m.g_up[0, 0])
    r = monte_carlo_chance_check(case, sched, N=200_000, seed=3, families=("sg_upper",))["sg_upper"]
    assert r.min_rate == pytest.approx(expected, abs=4 * math.sqrt(expected * (1 - expected) / 200_000))
    assert r.ok == (convention == "exact")


def test_inertia_family_uses_sampled_res_inertia():
    case, pr, sched, _ = solved("peaker")
    r = monte_carlo_chance_check(case, sched, pr.margins, N=N, families=("inertia",))["inertia"]
    assert r.rows == case.T and r.ok


def test_seeded_rates_reproducible():
    case, pr, sched, _ = solved("storage-inertia")
    a = monte_carlo_chance_check(case, sched, pr.margins, N=N, seed=11)
    b = monte_carlo_chance_check(case, sched, pr.margins, N=N, seed=11)
    assert {k: v.min_rate for k, v in a.items()} == {k: v.min_rate for k, v in b.items()}
