from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inertia_uc.case import SgUnit
from inertia_uc.desk import _pv, peaker_case, trivial_case
from inertia_uc.uncertainty import (aggregate_errors, chance_margin, compute_margins, expected_sg_cost, norm_cdf,
                                    norm_ppf)
from oracles import normal_cdf_bisect_ppf


def _res_case(means, stds, T=1):
    base = trivial_case()
    ress = []
    for k, (m, s) in enumerate(zip(means, stds)):
        r = _pv(f"R{k}", 1, (1.0,) * T, Pmax=10.0)
        ress.append(dataclasses.replace(r, err_mean=(m,) * T, err_std=(s,) * T))
    params = dataclasses.replace(base.params, T=T)
    return dataclasses.replace(base, params=params, ress=tuple(ress), load={1: (50.0,) * T})


def test_three_four_five():
    agg = aggregate_errors(_res_case([0.1, 0.2], [0.3, 0.4]))
    assert agg.Mrt[0] == pytest.approx(0.3)
    assert agg.Srt[0] == pytest.approx(0.5)


def test_no_res_is_all_zero():
    agg = aggregate_errors(trivial_case())
    for arr in (agg.Mrt, agg.Srt, agg.Mht, agg.Sht):
        assert np.all(arr == 0)


def test_monte_carlo_matches_aggregate():
    rng = np.random.default_rng(7)
    means = rng.uniform(-1, 1, 5)
    stds = rng.uniform(0.1, 2, 5)
    agg = aggregate_errors(_res_case(means, stds))
    N = 1_000_000
    draws = rng.normal(means, stds, size=(N, 5)).sum(axis=1)
    S = agg.Srt[0]
    assert abs(draws.mean() - agg.Mrt[0]) <= 3 * S / math.sqrt(N)
    # std of the sample std is about S / sqrt(2N)
    assert abs(draws.std() - S) <= 3 * S / math.sqrt(2 * N)


def test_system_override_replaces_power_aggregate():
    agg = aggregate_errors(peaker_case())
    assert np.all(agg.Mrt == 0.5) and np.all(agg.Srt == 1.0)
    assert np.all(agg.Sht == pytest.approx(0.05))


@pytest.mark.parametrize("eps,sigma,mean,expected", [
    (0.5, 1.0, 0.0, 0.0),
    (0.05, 1.0, 0.5, 1.14485),
    (0.05, 2.0, 0.0, 3.28971),
])
def test_chance_margin_examples(eps, sigma, mean, expected):
    assert chance_margin(eps, sigma, mean) == pytest.approx(expected, abs=1e-5)


def test_chance_margin_against_bisection():
    z = normal_cdf_bisect_ppf(0.95)
    assert chance_margin(0.05, 1.0, 0.5) == pytest.approx(z - 0.5, abs=1e-10)
    assert chance_margin(0.05, 2.0, 0.0) == pytest.approx(2 * z, abs=1e-10)


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-9, 1 - 1e-9))
def test_ppf_accuracy(p):
    assert abs(norm_ppf(p) - normal_cdf_bisect_ppf(p)) <= 1e-10 * max(1.0, abs(normal_cdf_bisect_ppf(p)))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.001, 0.999))
def test_cdf_inverts_ppf(p):
    assert norm_cdf(norm_ppf(p)) == pytest.approx(p, abs=1e-12)


@pytest.mark.parametrize("eps", [0.0, 1.0, -0.1, 1.5])
def test_chance_margin_rejects_eps(eps):
    with pytest.raises(ValueError):
        chance_margin(eps, 1.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(e1=st.floats(0.01, 0.49), e2=st.floats(0.01, 0.49), s=st.floats(0, 10), m=st.floats(-5, 5))
def test_margin_nonincreasing_in_eps(e1, e2, s, m):
    lo, hi = sorted((e1, e2))
    assert chance_margin(lo, s, m) >= chance_margin(hi, s, m) - 1e-12


@pytest.mark.parametrize("convention", ["exact", "literal"])
def test_margins_finite(convention):
    m = compute_margins(peaker_case(), convention=convention)
    for arr in (m.g_up, m.g_dn, m.h):
        assert np.all(np.isfinite(arr))
    if convention == "literal":
        assert np.allclose(m.g_up, m.g_dn)


def _unit(a=1.0, b=0.0, c=0.0, s=0.0):
    return SgUnit(id="G", bus=1, a=a, b=b, c=c, s=s, Pmin=0, Pmax=10, RU=10, RD=10, TU=1, TD=1, H=1, eps=0.05)


def test_expected_cost_pure_quadratic():
    assert expected_sg_cost(_unit(), 2.0, 0.0, 1, 0, 0.5, 1.0) == pytest.approx(4.0)


def test_expected_cost_offline():
    assert expected_sg_cost(_unit(a=0.1, b=3, c=7, s=9), 0.0, 0.0, 0, 0, 0.5, 1.0) == 0.0


def test_expected_cost_monte_carlo():
    unit = _unit(a=0.02, b=5.0, c=11.0, s=40.0)
    P, alpha, M, S = 30.0, 0.4, 0.5, 2.0
    rng = np.random.default_rng(3)
    x = P + alpha * rng.normal(M, S, 2_000_000)
    mc = np.mean(unit.a * x**2 + unit.b * x) + unit.c + unit.s
    sd = np.std(unit.a * x**2 + unit.b * x) / math.sqrt(x.size)
    assert abs(expected_sg_cost(unit, P, alpha, 1, 1, M, S) - mc) <= 4 * sd
