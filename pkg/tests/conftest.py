from __future__ import annotations

import sys
from functools import lru_cache
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from inertia_uc.desk import curated_suite  # noqa: E402
from inertia_uc.model import ModelOptions, build_model  # noqa: E402
from inertia_uc.solver import solve_ccuc, solve_fixed_qp  # noqa: E402

DATA = Path(__file__).resolve().parents[1] / "src" / "inertia_uc" / "data"


@lru_cache(maxsize=None)
def solved(name: str, inertia: bool = True):
    """(case, problem, schedule, duals) for a curated case; cached across tests."""
    case = curated_suite()[name]
    pr = build_model(case, options=ModelOptions(inertia=inertia))
    s = solve_ccuc(pr)
    sched, duals = solve_fixed_qp(pr, s.u)
    return case, pr, sched, duals


@pytest.fixture
def data_dir() -> Path:
    return DATA
