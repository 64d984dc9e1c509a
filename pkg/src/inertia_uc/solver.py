"""MIQP solution by branch-and-bound, fixed-commitment QP re-solve and dual extraction."""
from __future__ import annotations

import heapq
import itertools
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .model import CENSUS_FAMILY, FAMILY_SPACE, Problem
from .qp import QPResult, solve_qp

log = logging.getLogger(__name__)

INT_TOL = 1e-5


class InfeasibleError(RuntimeError):
    """The model (or a fixed commitment) admits no feasible point.

    ``family`` names the constraint family carrying the largest elastic violation.
    """

    def __init__(self, message: str, family: str | None = None, violations: dict | None = None):
        super().__init__(message if family is None else f"{message} (largest violation in family '{family}')")
        self.family = family
        self.violations = violations or {}


@dataclass
class DecisionSchedule:
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray
    P: np.ndarray
    alpha: np.ndarray
    Pd: np.ndarray
    Pc: np.ndarray
    ad: np.ndarray
    ac: np.ndarray
    He: np.ndarray
    e: np.ndarray
    theta: np.ndarray
    objective: float
    status: str = "optimal"
    gap: float = 0.0
    bound: float = float("nan")
    node_count: int = 0

    def to_dict(self) -> dict:
        out = {k: getattr(self, k).tolist() for k in _SCHEDULE_ARRAYS}
        out.update(objective=self.objective, status=self.status, gap=self.gap, bound=self.bound,
                   node_count=self.node_count)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionSchedule":
        kw = {k: np.asarray(d[k], dtype=float) for k in _SCHEDULE_ARRAYS}
        nT = len(d["u"][0]) if d["u"] else 0
        for k, arr in kw.items():
            if arr.size == 0:
                kw[k] = arr.reshape(0, nT)
        return cls(**kw, objective=d["objective"], status=d.get("status", "optimal"), gap=d.get("gap", 0.0),
                   bound=d.get("bound", float("nan")), node_count=d.get("node_count", 0))


_SCHEDULE_ARRAYS = ("u", "v", "w", "P", "alpha", "Pd", "Pc", "ad", "ac", "He", "e", "theta")


@dataclass
class DualRecord:
    """Multipliers in economic sign: prices are the objective's sensitivity to demand/requirements.

    ``kappa`` is the multiplier of ``u = u*`` with the Lagrangian term ``+kappa (u - u*)``.
    Other families are kept in ``extra`` (inequalities: >= 0; equalities: raw solver sign).
    """

    lambda_: np.ndarray
    gamma: np.ndarray
    chi: np.ndarray
    mu_plus: np.ndarray
    mu_minus: np.ndarray
    upsilon_plus: np.ndarray
    upsilon_minus: np.ndarray
    rho_plus: np.ndarray
    rho_minus: np.ndarray
    kappa: np.ndarray
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k).tolist() for k in _DUAL_ARRAYS}
        out["lambda"] = out.pop("lambda_")
        out["extra"] = {k: v.tolist() for k, v in self.extra.items()}
        return out


_DUAL_ARRAYS = ("lambda_", "gamma", "chi", "mu_plus", "mu_minus", "upsilon_plus", "upsilon_minus",
                "rho_plus", "rho_minus", "kappa")


# --------------------------------------------------------------------------- helpers


def schedule_from_x(problem: Problem, x: np.ndarray, objective: float, **info) -> DecisionSchedule:
    var = problem.var
    get = {name: x[idx] for name, idx in var.blocks.items()}
    return DecisionSchedule(**get, objective=float(objective), **info)


def _space_shape(problem: Problem, space: str):
    case, T = problem.case, problem.case.T
    return {
        "sg": (len(case.sgs), T), "es": (len(case.ess), T), "line": (len(case.network.lines), T),
        "bus": (len(case.network.buses), T), "hour": (T,),
    }[space]


def family_values(problem: Problem, meta, values: np.ndarray) -> dict[str, np.ndarray]:
    """Scatter row values into arrays keyed by family and shaped by the family's index space."""
    fams, units, ts = meta
    out: dict[str, np.ndarray] = {}
    for fam, unit, t, val in zip(fams, units, ts, values):
        space = FAMILY_SPACE.get(fam)
        if space is None:
            continue
        arr = out.get(fam)
        if arr is None:
            arr = out[fam] = np.zeros(_space_shape(problem, space))
        if space == "hour":
            arr[t] += val
        else:
            arr[unit, t] += val
    return out


def extract_duals(problem: Problem, res: QPResult, eq_meta, le_meta) -> DualRecord:
    eqd = family_values(problem, eq_meta, res.y)
    led = family_values(problem, le_meta, res.z)
    nG, T = len(problem.case.sgs), problem.case.T

    def sg(d, fam):
        return d.get(fam, np.zeros((nG, T)))

    extra = {}
    for fam, arr in eqd.items():
        if fam not in ("balance", "reserve", "fix_u"):
            extra[fam] = arr
    for fam, arr in led.items():
        if fam not in ("cap_up", "cap_dn", "ramp_up", "ramp_dn", "part_hi", "alpha_lo", "inertia"):
            extra[fam] = arr
    return DualRecord(
        lambda_=-eqd.get("balance", np.zeros((len(problem.case.network.buses), T))),
        gamma=-eqd.get("reserve", np.zeros(T)),
        chi=led.get("inertia", np.zeros(T)),
        mu_plus=sg(led, "cap_up"),
        mu_minus=sg(led, "cap_dn"),
        upsilon_plus=sg(led, "ramp_up"),
        upsilon_minus=sg(led, "ramp_dn"),
        rho_plus=sg(led, "part_hi"),
        rho_minus=sg(led, "alpha_lo"),
        kappa=sg(eqd, "fix_u"),
        extra=extra,
    )


def solve_node(problem: Problem, fix: dict | None = None, fix_family: dict | None = None, tol: float = 1e-9):
    Q, c, A, b, G, h, eq_meta, le_meta = problem.qp(fix, fix_family)
    res = solve_qp(Q, c, A, b, G, h, tol=tol)
    return res, eq_meta, le_meta


def _clean_binaries(sched: DecisionSchedule) -> None:
    sched.u = np.round(sched.u)
    sched.v = np.round(np.clip(sched.v, 0.0, None))
    sched.w = np.round(np.clip(sched.w, 0.0, None))


# --------------------------------------------------------------------------- fixed commitment


def solve_fixed_qp(problem: Problem, u_star: np.ndarray, extra_fix: dict | None = None,
                   tol: float = 1e-10) -> tuple[DecisionSchedule, DualRecord]:
    """Solve the convex QP with ``u = u_star`` and return primal schedule plus duals."""
    u_star = np.asarray(u_star, dtype=float)
    if u_star.shape != problem.var["u"].shape:
        raise ValueError(f"u_star has shape {u_star.shape}, expected {problem.var['u'].shape}")
    fix, fam = problem.u_fix(u_star)
    if extra_fix:
        for col, (val, meta) in extra_fix.items():
            fix[col] = val
            fam[col] = meta
    res, eq_meta, le_meta = solve_node(problem, fix, fam, tol=tol)
    if not res.ok:
        raise InfeasibleError(
            f"fixed commitment QP is {res.status}",
            *_diagnose(problem, fix) if res.status == "infeasible" else (None, None),
        )
    sched = schedule_from_x(problem, res.x, res.obj, status="optimal", bound=res.obj)
    _clean_binaries(sched)
    duals = extract_duals(problem, res, eq_meta, le_meta)
    _log_fixed_qp_notes(problem, sched, res, len(fix), len(eq_meta[0]))
    return sched, duals


def _log_fixed_qp_notes(problem: Problem, sched: DecisionSchedule, res, n_fixed: int, n_eq: int) -> None:
    both = np.nonzero((sched.Pd > 1e-6) & (sched.Pc > 1e-6))
    for e, t in zip(*both):
        log.warning("storage %s charges and discharges together at hour %d (%.6g / %.6g MW)",
                    problem.case.ess[e].id, t, sched.Pc[e, t], sched.Pd[e, t])
    # more active rows than free columns: the multipliers are not unique and the
    # interior-point (central) ones are reported
    active = int(np.sum(res.s <= 1e-7 * np.maximum(1.0, np.abs(res.s).max(initial=1.0))))
    free = problem.var.n - n_fixed
    if active + n_eq - n_fixed > free:
        log.info("fixed-commitment duals may be non-unique (%d active rows, %d free columns); "
                 "reporting the central solution", active + n_eq - n_fixed, free)


# --------------------------------------------------------------------------- branch and bound


@dataclass(order=True)
class _Node:
    bound: float
    node_id: int
    fix: dict = field(compare=False)
    x: np.ndarray = field(compare=False)


def solve_ccuc(problem: Problem, gap: float = 1e-4, node_limit: int = 50_000, time_limit: float | None = None,
               tol: float = 1e-9) -> DecisionSchedule:
    """Best-bound branch-and-bound on commitment columns over QP relaxations.

    Branches on the most fractional ``u`` (ties: lowest column). Stops when the
    incumbent is within ``gap`` (relative) of the best open bound; if the node or
    time budget runs out first, the incumbent is returned with ``status='suboptimal'``.
    """
    start = time.monotonic()
    ucols = problem.integer_cols
    ids = itertools.count()
    root, _, _ = solve_node(problem, tol=tol)
    if not root.ok:
        if root.status == "infeasible":
            raise InfeasibleError("relaxation is infeasible", *_diagnose(problem, {}))
        raise RuntimeError(f"root relaxation failed: {root.status}")

    best_obj = np.inf
    best_u: np.ndarray | None = None
    nodes = 1

    def consider(u_cand: np.ndarray) -> None:
        nonlocal best_obj, best_u, nodes
        fix = {int(col): float(val) for col, val in zip(ucols, u_cand)}
        res, _, _ = solve_node(problem, fix, tol=tol)
        nodes += 1
        if res.ok and res.obj < best_obj:
            best_obj, best_u = res.obj, u_cand.copy()

    # Rounding heuristics for an early incumbent.
    xr = root.x[ucols]
    for cand in (np.where(xr > 0.5, 1.0, 0.0), np.where(xr > INT_TOL, 1.0, 0.0)):
        consider(cand)

    heap = [_Node(root.obj, next(ids), {}, root.x)]
    status = "optimal"
    while heap:
        node = heapq.heappop(heap)
        if node.bound >= best_obj - _abs_gap(best_obj, gap):
            heapq.heappush(heap, node)
            break
        if nodes >= node_limit or (time_limit is not None and time.monotonic() - start > time_limit):
            heapq.heappush(heap, node)
            status = "suboptimal"
            break
        uvals = node.x[ucols]
        frac = np.abs(uvals - np.round(uvals))
        k = int(np.argmax(frac))
        if frac[k] <= INT_TOL:
            if node.bound < best_obj:
                best_obj, best_u = node.bound, np.round(uvals)
            continue
        col = int(ucols[k])
        for val in (0.0, 1.0):
            fix = dict(node.fix)
            fix[col] = val
            res, _, _ = solve_node(problem, fix, tol=tol)
            nodes += 1
            if res.ok and res.obj < best_obj - _abs_gap(best_obj, gap):
                heapq.heappush(heap, _Node(res.obj, next(ids), fix, res.x))

    if best_u is None:
        raise InfeasibleError("no integer-feasible commitment found", *_diagnose(problem, {}))
    lower = min([n.bound for n in heap], default=best_obj)
    lower = min(lower, best_obj)
    u_star = best_u.reshape(problem.var["u"].shape)
    sched, _ = solve_fixed_qp(problem, u_star, tol=max(tol * 0.1, 1e-12))
    sched.status = status
    sched.bound = float(lower)
    sched.gap = float((sched.objective - lower) / max(1.0, abs(sched.objective)))
    sched.node_count = nodes
    return sched


def _abs_gap(best: float, gap: float) -> float:
    if not np.isfinite(best):
        return 0.0
    return gap * max(1.0, abs(best))


def solve_relaxation(problem: Problem, tol: float = 1e-9) -> DecisionSchedule:
    res, _, _ = solve_node(problem, tol=tol)
    if not res.ok:
        raise InfeasibleError(f"relaxation is {res.status}")
    return schedule_from_x(problem, res.x, res.obj, status="relaxed", bound=res.obj)


# --------------------------------------------------------------------------- diagnosis


def _diagnose(problem: Problem, fix: dict) -> tuple[str | None, dict]:
    """Elastic LP: minimize total violation of every row, report the family absorbing the most."""
    _, _, A, b, G, h, eq_meta, le_meta = problem.qp(fix)
    n, p, m = problem.n, A.shape[0], G.shape[0]
    # columns: x (free), eq slacks + and -, ineq slacks
    A_eq = sp.hstack([A, sp.identity(p), -sp.identity(p), sp.csr_matrix((p, m))], format="csr")
    A_ub = sp.hstack([G, sp.csr_matrix((m, 2 * p)), -sp.identity(m)], format="csr")
    cost = np.concatenate([np.zeros(n), np.ones(2 * p + m)])
    bounds = [(None, None)] * n + [(0, None)] * (2 * p + m)
    res = linprog(cost, A_ub=A_ub, b_ub=h, A_eq=A_eq, b_eq=b, bounds=bounds, method="highs")
    if res.status != 0:
        return None, {}
    sl = res.x[n:]
    viol_eq = sl[:p] + sl[p:2 * p]
    viol_le = sl[2 * p:]
    totals: dict[str, float] = {}
    for fam, val in zip(eq_meta[0] + le_meta[0], np.concatenate([viol_eq, viol_le])):
        key = CENSUS_FAMILY.get(fam, fam)
        totals[key] = totals.get(key, 0.0) + float(val)
    if not totals or max(totals.values()) <= 1e-9:
        return None, totals
    worst = max(totals, key=totals.get)
    return worst, totals


# --------------------------------------------------------------------------- MILP cross-check


def solve_ccuc_milp(problem: Problem, segments: int = 8, time_limit: float | None = 120.0,
                    mip_gap: float = 1e-4) -> DecisionSchedule:
    """Commitment from an outer piecewise-linear MILP (HiGHS), dispatch re-solved as the exact QP.

    Each quadratic term is replaced by an epigraph variable supported by
    ``segments + 1`` tangent lines, which under-estimates the cost; the resulting
    commitment is then priced exactly by :func:`solve_fixed_qp`.
    """
    case, T = problem.case, problem.case.T
    P, al = problem.var["P"], problem.var["alpha"]
    M, S = problem.agg.Mrt, problem.agg.Srt
    n = problem.n
    _, c0, A, b, G, h, _, _ = problem.qp()
    epi = []  # (g, t, kind)
    for g, sg in enumerate(case.sgs):
        if sg.a > 0:
            for t in range(T):
                epi.append((g, t, "q"))
                epi.append((g, t, "a"))
    ne = len(epi)
    N = n + ne
    cost = np.concatenate([c0, np.zeros(ne)])
    rows, cols, vals, ub = [], [], [], []
    r = 0
    for k, (g, t, kind) in enumerate(epi):
        sg = case.sgs[g]
        zc = n + k
        if kind == "q":
            cost[zc] = sg.a
            lo, hi = -abs(M[t]), sg.Pmax + abs(M[t])
            terms = [(P[g, t], 1.0), (al[g, t], M[t])]
        else:
            cost[zc] = sg.a * S[t] ** 2
            lo, hi = 0.0, 1.0
            terms = [(al[g, t], 1.0)]
        for q in np.linspace(lo, hi, segments + 1):
            # 2 q0 * expr - z <= q0^2
            for col, coef in terms:
                rows.append(r); cols.append(col); vals.append(2 * q * coef)
            rows.append(r); cols.append(zc); vals.append(-1.0)
            ub.append(q * q)
            r += 1
    # the quadratic objective is fully carried by the epigraph variables
    G_ext = sp.vstack([sp.hstack([G, sp.csr_matrix((G.shape[0], ne))]),
                       sp.csr_matrix((vals, (rows, cols)), shape=(r, N))], format="csr")
    h_ext = np.concatenate([h, ub])
    A_ext = sp.hstack([A, sp.csr_matrix((A.shape[0], ne))], format="csr")
    integrality = np.zeros(N)
    integrality[problem.integer_cols] = 1
    lb = np.full(N, -np.inf)
    ubv = np.full(N, np.inf)
    lb[problem.integer_cols] = 0.0
    ubv[problem.integer_cols] = 1.0
    options = {"mip_rel_gap": mip_gap, "disp": False}
    if time_limit is not None:
        options["time_limit"] = time_limit
    res = milp(cost, integrality=integrality, bounds=Bounds(lb, ubv),
               constraints=[LinearConstraint(G_ext, -np.inf, h_ext), LinearConstraint(A_ext, b, b)],
               options=options)
    if res.x is None:
        raise InfeasibleError(f"MILP returned no solution: {res.message}")
    u = np.round(res.x[problem.integer_cols]).reshape(problem.var["u"].shape)
    sched, _ = solve_fixed_qp(problem, u)
    sched.status = "milp" if res.status == 0 else "milp-suboptimal"
    sched.bound = float(res.fun)
    sched.gap = float((sched.objective - res.fun) / max(1.0, abs(sched.objective)))
    return sched


# --------------------------------------------------------------------------- solution dump

SOLUTION_KEYS = ("schedule", "duals", "census", "gap", "node_count")


def solution_dump(problem: Problem, schedule: DecisionSchedule, duals: DualRecord | None) -> dict:
    """JSON-ready record of a solve: primal schedule, duals, constraint census and search statistics."""
    return {
        "schedule": schedule.to_dict(),
        "duals": duals.to_dict() if duals is not None else None,
        "census": dict(sorted(problem.census.items())),
        "gap": schedule.gap,
        "node_count": schedule.node_count,
    }


def solve_auto(problem: Problem, gap: float = 1e-4, node_limit: int = 50_000, time_limit: float | None = None,
               method: str = "auto", bnb_limit: int = 200) -> DecisionSchedule:
    """Branch-and-bound for small commitment sets, the piecewise-linear MILP path above ``bnb_limit`` binaries."""
    if method not in ("auto", "bnb", "milp"):
        raise ValueError(f"unknown method {method!r}")
    if method == "milp" or (method == "auto" and problem.integer_cols.size > bnb_limit):
        return solve_ccuc_milp(problem, time_limit=time_limit, mip_gap=gap)
    return solve_ccuc(problem, gap=gap, node_limit=node_limit, time_limit=time_limit)
