"""Full-scale run on the 118-bus case; minutes per solve, so opt in with INERTIA_UC_SLOW=1."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from inertia_uc.case import load_case, scale_penetration
from inertia_uc.model import ModelOptions, build_model
from inertia_uc.settlement import inertia_deficits, rmr_schedule
from inertia_uc.solver import solve_auto, solve_fixed_qp

pytestmark = pytest.mark.skipif(os.environ.get("INERTIA_UC_SLOW") != "1", reason="set INERTIA_UC_SLOW=1")

CASE = Path(__file__).resolve().parents[1] / "src" / "inertia_uc" / "data" / "ieee118_mod.json"


def _solve(case, inertia):
    pr = build_model(case, options=ModelOptions(inertia=inertia))
    s = solve_auto(pr, gap=1e-3, time_limit=600)
    sched, _ = solve_fixed_qp(pr, s.u)
    return pr, sched


def test_118_inertia_run_closes_base_deficit():
    case = scale_penetration(load_case(CASE), 0.2)
    pr_b, base = _solve(case, inertia=False)
    pr, sched = _solve(case, inertia=True)
    assert inertia_deficits(case, pr_b.margins, base).any()
    assert not inertia_deficits(case, pr.margins, sched).any()
    assert sched.objective >= base.objective
    _, rs, _ = rmr_schedule(pr, base)
    assert not inertia_deficits(case, pr.margins, rs).any()
    assert np.round(sched.u).sum(axis=0).min() > np.round(base.u).sum(axis=0).min()
