from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import solved
from inertia_uc.freq import (FrequencyMetric, SfrParams, kinetic_energy, rocof_closed_form, rocof_regressions,
                             scenario_frequency_metrics, simulate_outage, write_metrics)

FAST = SfrParams(dt=1e-3, horizon=30.0)
LOAD = 10_000.0


@pytest.mark.parametrize("dP", [100.0, 500.0, 1500.0])
@pytest.mark.parametrize("E", [5_000.0, 20_000.0, 60_000.0])
def test_initial_slope_matches_closed_form(dP, E):
    traj = simulate_outage(E, LOAD, dP, FAST)
    assert traj.rocof_initial == pytest.approx(rocof_closed_form(E, dP, 60.0), rel=1e-2)


@pytest.mark.parametrize("E,want", [(37_220.0, -1.209), (54_600.0, -0.824), (45_000.0, -1.0)])
def test_reference_rocof_values(E, want):
    traj = simulate_outage(E, LOAD, 1500.0, FAST)
    assert traj.rocof_initial == pytest.approx(want, rel=5e-3)


def test_no_outage_stays_flat():
    traj = simulate_outage(20_000.0, LOAD, 0.0, FAST)
    assert np.all(traj.df == 0.0) and traj.nadir == 60.0


@pytest.mark.parametrize("kw", [dict(E=0.0), dict(E=-1.0), dict(dP=-1.0), dict(dP=LOAD), dict(Psys_load=0.0)])
def test_rejects_bad_inputs(kw):
    args = dict(E=20_000.0, Psys_load=LOAD, dP=100.0) | kw
    with pytest.raises(ValueError):
        simulate_outage(**args)


@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(dt=0.05), dict(horizon=10.0), dict(Tr=0.0), dict(R=0.0)])
def test_rejects_bad_parameters(kw):
    with pytest.raises(ValueError):
        SfrParams(**kw)


@settings(max_examples=20, deadline=None)
@given(E1=st.floats(2_000.0, 80_000.0), E2=st.floats(2_000.0, 80_000.0), dP=st.floats(10.0, 2_000.0))
def test_more_inertia_softens_response(E1, E2, dP):
    lo, hi = sorted((E1, E2))
    p = SfrParams(dt=5e-3, horizon=30.0)
    a, b = simulate_outage(lo, LOAD, dP, p), simulate_outage(hi, LOAD, dP, p)
    assert abs(b.rocof_initial) <= abs(a.rocof_initial) + 1e-9
    assert b.nadir >= a.nadir - 1e-9
    assert a.nadir <= 60.0 and b.nadir <= 60.0


def test_nadir_recovers_toward_droop_steady_state():
    p = SfrParams()
    traj = simulate_outage(30_000.0, LOAD, 500.0, p)
    settle = -(500.0 / LOAD) / (p.D + p.Km / p.R) * 60.0
    assert traj.nadir < 60.0 + settle < 60.0
    assert traj.df[-1] == pytest.approx(settle, rel=2e-2)
    assert 0.0 < traj.nadir_time < p.horizon


def test_kinetic_energy_counts_committed_units():
    case, pr, sched, _ = solved("peaker")
    for t in range(case.T):
        want = sum(sg.H * sg.Pmax * sched.u[g, t] for g, sg in enumerate(case.sgs))
        want += sum((r.inertia_forecast[t] + pr.margins.h[k, t]) * r.Pmax for k, r in enumerate(case.ress))
        got = kinetic_energy(case, sched, t, pr.margins)
        assert got == pytest.approx(want, rel=1e-12)
        assert got >= case.inertia_requirement() - 1e-6


def test_inertia_aware_schedule_never_worse():
    case, pr, sched, _ = solved("peaker")
    _, _, base, _ = solved("peaker", inertia=False)
    dP = 0.5 * min(case.total_load())
    m = scenario_frequency_metrics(case, {"base": base, "inertia": sched}, list(range(case.T)), dP,
                                   SfrParams(dt=5e-3), pr.margins)
    assert rocof_regressions(m) == []
    worse = [x for x in m if x.scenario == "base" and abs(x.rocof) > abs(
        next(y for y in m if y.scenario == "inertia" and y.hour == x.hour).rocof) + 1e-9]
    assert worse


def test_identical_schedules_have_no_regressions():
    case, pr, sched, _ = solved("storage-inertia")
    m = scenario_frequency_metrics(case, {"base": sched, "copy": sched}, [0, 1], 10.0, SfrParams(dt=5e-3),
                                   pr.margins)
    assert rocof_regressions(m) == []
    assert [(x.scenario, x.hour) for x in m] == [("base", 0), ("base", 1), ("copy", 0), ("copy", 1)]


def test_regression_detected():
    m = [FrequencyMetric("base", 0, 1.0, -0.5, 59.5), FrequencyMetric("mp", 0, 1.0, -0.6, 59.4)]
    assert rocof_regressions(m) == [("mp", 0)]


def test_metric_and_trajectory_files(tmp_path):
    traj = simulate_outage(20_000.0, LOAD, 100.0, SfrParams(dt=1e-2))
    lines = traj.write(tmp_path / "traj.csv").read_text().splitlines()
    assert lines[0] == "t,df" and len(lines) == 1 + len(traj.t)
    m = [FrequencyMetric("base", 3, 1.5, -0.25, 59.8)]
    assert write_metrics(m, tmp_path / "m.csv").read_text().splitlines()[1] == "base,3,1.5,-0.25,59.8"
