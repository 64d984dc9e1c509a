"""Reference computations that do not go through the package's own QP solver or search."""
from __future__ import annotations

import itertools
import math

import numpy as np
import scipy.sparse as sp
from cvxopt import matrix, solvers
from scipy.optimize import linprog

solvers.options["show_progress"] = False
solvers.options["abstol"] = 1e-10
solvers.options["reltol"] = 1e-10
solvers.options["feastol"] = 1e-10


def _logic_ok(u_row, u0, TU, TD) -> bool:
    """Minimum up/down windows with startups/shutdowns implied by the pattern."""
    T = len(u_row)
    prev = [u0] + list(u_row[:-1])
    v = [max(0, a - b) for a, b in zip(u_row, prev)]
    w = [max(0, b - a) for a, b in zip(u_row, prev)]
    for t in range(T):
        if t >= TU - 1 and sum(v[t - TU + 1:t + 1]) > u_row[t]:
            return False
        if t >= TD - 1 and sum(w[t - TD + 1:t + 1]) + u_row[t] > 1:
            return False
    return True


def fixed_commitment_qp(problem, u: np.ndarray):
    """Objective of the QP with the commitment substituted, or None if infeasible."""
    Q, c, A, b, G, h, _, _ = problem.qp()
    Q, A, G = sp.csr_matrix(Q), sp.csr_matrix(A), sp.csr_matrix(G)
    ucols = problem.var["u"].ravel()
    uval = u.ravel().astype(float)
    keep = np.setdiff1d(np.arange(problem.n), ucols)
    const = float(c[ucols] @ uval)
    b2 = b - A[:, ucols] @ uval
    h2 = h - G[:, ucols] @ uval
    A2, G2 = A[:, keep], G[:, keep]
    Q2, c2 = Q[keep][:, keep], c[keep]
    # rows that only touched u become constant checks
    g_nz = np.diff(G2.indptr) > 0
    if np.any(h2[~g_nz] < -1e-9):
        return None
    a_nz = np.diff(A2.indptr) > 0
    if np.any(np.abs(b2[~a_nz]) > 1e-9):
        return None
    A2, b2, G2, h2 = A2[a_nz], b2[a_nz], G2[g_nz], h2[g_nz]
    lp = linprog(np.zeros(len(keep)), A_ub=G2, b_ub=h2, A_eq=A2, b_eq=b2, bounds=(None, None), method="highs")
    if lp.status != 0:
        return None
    args = (matrix(Q2.toarray()), matrix(c2), matrix(G2.toarray()), matrix(h2), matrix(A2.toarray()), matrix(b2))
    try:
        sol = solvers.qp(*args)
    except (ValueError, ArithmeticError):
        sol = solvers.qp(*args, kktsolver="ldl")
    if sol["status"] != "optimal":
        return None
    return float(sol["primal objective"]) + const


def brute_force_ccuc(problem):
    """Best objective over every commitment pattern that passes the logic windows."""
    case = problem.case
    T = case.T
    rows_per_unit = []
    for sg in case.sgs:
        rows_per_unit.append([r for r in itertools.product((0, 1), repeat=T) if _logic_ok(r, sg.u0, sg.TU, sg.TD)])
    best, best_u = math.inf, None
    for combo in itertools.product(*rows_per_unit):
        u = np.array(combo, dtype=float).reshape(len(case.sgs), T)
        cap = (u * np.array([[sg.Pmax] for sg in case.sgs])).sum(axis=0) if case.sgs else np.zeros(T)
        if np.any(cap + sum(es.Pe_max for es in case.ess) + 1e-9 < np.array(case.total_load())
                  - np.array([sum(r.forecast[t] for r in case.ress) for t in range(T)])):
            continue
        obj = fixed_commitment_qp(problem, u)
        if obj is not None and obj < best:
            best, best_u = obj, u
    return best, best_u


def normal_cdf_bisect_ppf(p: float) -> float:
    """Quantile by bisection on the error function.

    The upper half is mirrored onto the lower tail, where erfc keeps full precision.
    """
    if p > 0.5:
        return -normal_cdf_bisect_ppf(1.0 - p)
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(-mid / math.sqrt(2.0)) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
