"""Energy, reserve and inertia prices under marginal, convex-hull-style and average-incremental rules."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .case import SystemCase
from .model import Problem, Rows, VarIndex, _add_balance, inertia_offset
from .qp import solve_qp
from .solver import DecisionSchedule, DualRecord, InfeasibleError
from .uncertainty import AggregateError, ChanceMargins, aggregate_errors, compute_margins

log = logging.getLogger(__name__)

SCHEMES = ("MP", "ACHP", "AIP", "RMR", "BASE")
ALLOCATION_RULES = ("uniform", "first-hour", "energy-weighted")


@dataclass
class PriceSeries:
    """Prices for one scheme. ``lambda_`` is (bus, hour); ``gamma`` and ``chi`` are per hour.

    ``duals`` and ``primal`` hold the multipliers and decisions of the problem the
    prices came from, so closed-form assemblies can be audited afterwards.
    """

    scheme: str
    buses: tuple[int, ...]
    lambda_: np.ndarray
    gamma: np.ndarray
    chi: np.ndarray
    metadata: dict = field(default_factory=dict)
    duals: DualRecord | None = None
    primal: dict | None = None

    @property
    def T(self) -> int:
        return self.gamma.shape[0]

    def lam_at(self, bus: int) -> np.ndarray:
        return self.lambda_[self.buses.index(bus)]

    def scaled(self, factor: float) -> "PriceSeries":
        return PriceSeries(self.scheme, self.buses, self.lambda_ * factor, self.gamma * factor, self.chi * factor,
                           dict(self.metadata))

    def write(self, directory: str | Path, stem: str | None = None) -> list[Path]:
        """CSV of nodal energy prices, CSV of system prices, JSON metadata."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        stem = stem or f"prices_{self.scheme.lower()}"
        p1, p2, p3 = d / f"{stem}_energy.csv", d / f"{stem}_system.csv", d / f"{stem}_meta.json"
        with open(p1, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["hour", "bus", "lambda"])
            for t in range(self.T):
                for k, bus in enumerate(self.buses):
                    wr.writerow([t, bus, _fmt(self.lambda_[k, t])])
        with open(p2, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["hour", "gamma", "chi"])
            for t in range(self.T):
                wr.writerow([t, _fmt(self.gamma[t]), _fmt(self.chi[t])])
        meta = {"scheme": self.scheme, "buses": list(self.buses), **self.metadata}
        p3.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return [p1, p2, p3]

    @classmethod
    def read(cls, directory: str | Path, stem: str) -> "PriceSeries":
        d = Path(directory)
        meta = json.loads((d / f"{stem}_meta.json").read_text())
        buses = tuple(meta.pop("buses"))
        scheme = meta.pop("scheme")
        with open(d / f"{stem}_system.csv") as fh:
            rows = list(csv.DictReader(fh))
        T = len(rows)
        gamma = np.array([float(r["gamma"]) for r in rows])
        chi = np.array([float(r["chi"]) for r in rows])
        lam = np.zeros((len(buses), T))
        with open(d / f"{stem}_energy.csv") as fh:
            for r in csv.DictReader(fh):
                lam[buses.index(int(r["bus"])), int(r["hour"])] = float(r["lambda"])
        return cls(scheme, buses, lam, gamma, chi, meta)


def _fmt(x: float) -> str:
    return repr(float(x))


# --------------------------------------------------------------------------- marginal pricing


def mp_prices(duals: DualRecord, case: SystemCase, scheme: str = "MP") -> PriceSeries:
    """Prices read straight from the fixed-commitment duals."""
    if duals is None or duals.lambda_ is None:
        raise ValueError("marginal pricing needs the duals of the fixed-commitment problem")
    return PriceSeries(scheme, tuple(case.network.buses), np.array(duals.lambda_), np.array(duals.gamma),
                       np.array(duals.chi), {"source": "fixed-commitment duals"}, duals=duals)


def non_sg_inertia(case: SystemCase, margins: ChanceMargins, He: np.ndarray, t: int) -> float:
    return sum(He[e, t] * es.Pe_max for e, es in enumerate(case.ess)) + inertia_offset(case, margins, t)


def mp_chi_quotient(problem: Problem, schedule: DecisionSchedule, duals: DualRecord) -> np.ndarray:
    """Inertia price rebuilt from commitment stationarity of the fixed-binary problem.

    Returns nan for hours where the requirement net of non-SG inertia is not positive.
    """
    case, T = problem.case, problem.case.T
    ex = duals.extra
    nG = len(case.sgs)
    zeros = np.zeros((nG, T))
    yL = ex.get("logic", zeros)
    zU = ex.get("min_up", zeros)
    zD = ex.get("min_down", zeros)
    req = case.inertia_requirement()
    out = np.full(T, np.nan)
    for t in range(T):
        den = req - non_sg_inertia(case, problem.margins, schedule.He, t)
        if den <= 0:
            continue
        num = 0.0
        for g, sg in enumerate(case.sgs):
            logic = yL[g, t] - (yL[g, t + 1] if t + 1 < T else 0.0) - zU[g, t] + zD[g, t]
            term = (sg.c - duals.mu_plus[g, t] * sg.Pmax + duals.mu_minus[g, t] * sg.Pmin
                    - duals.rho_plus[g, t] + duals.kappa[g, t] + logic)
            num += schedule.u[g, t] * term
        out[t] = num / den
    return out


# --------------------------------------------------------------------------- start-up allocation


@dataclass
class StartupAllocation:
    rule: str
    exact: dict  # (g, t) -> Fraction
    s_tilde: np.ndarray  # (nG, T) $/h
    intervals: list  # (g, t_on, t_off, started)

    def interval_sum(self, g: int, t_on: int, t_off: int) -> Fraction:
        return sum((self.exact.get((g, t), Fraction(0)) for t in range(t_on, t_off)), Fraction(0))


def online_intervals(u_row: np.ndarray, u0: int) -> list[tuple[int, int, bool]]:
    """Half-open online blocks ``[t_on, t_off)``; ``started`` is False for a block carried over from ``u0``."""
    out = []
    T = len(u_row)
    t = 0
    while t < T:
        if u_row[t] > 0.5:
            t_on = t
            while t < T and u_row[t] > 0.5:
                t += 1
            started = not (t_on == 0 and u0 == 1)
            out.append((t_on, t, started))
        else:
            t += 1
    return out


def split_startup(s: float, energies, rule: str) -> list[Fraction]:
    """Exact split of ``s`` over an online block. ``energies`` are the block's dispatched MW."""
    n = len(energies)
    S = Fraction(s)
    if n == 0:
        return []
    if rule == "uniform":
        return [S / n] * n
    if rule == "first-hour":
        return [S] + [Fraction(0)] * (n - 1)
    if rule == "energy-weighted":
        ex = [Fraction(max(float(p), 0.0)) for p in energies]
        tot = sum(ex, Fraction(0))
        if tot <= 0:
            return [S / n] * n
        return [S * p / tot for p in ex]
    raise ValueError(f"unknown allocation rule {rule!r}; choose from {ALLOCATION_RULES}")


def allocate_startup(case: SystemCase, schedule: DecisionSchedule, rule: str = "uniform") -> StartupAllocation:
    if rule not in ALLOCATION_RULES:
        raise ValueError(f"unknown allocation rule {rule!r}; choose from {ALLOCATION_RULES}")
    T = case.T
    exact: dict = {}
    s_tilde = np.zeros((len(case.sgs), T))
    intervals = []
    for g, sg in enumerate(case.sgs):
        for t_on, t_off, started in online_intervals(schedule.u[g], sg.u0):
            intervals.append((g, t_on, t_off, started))
            if not started or sg.s == 0:
                continue
            parts = split_startup(sg.s, schedule.P[g, t_on:t_off], rule)
            for k, val in enumerate(parts):
                exact[(g, t_on + k)] = val
                s_tilde[g, t_on + k] = float(val)
    return StartupAllocation(rule, exact, s_tilde, intervals)


def average_incremental_b(case: SystemCase, schedule: DecisionSchedule) -> tuple[np.ndarray, list]:
    """Per (unit, hour) energy coefficient with no-load and start-up costs spread over the block's energy.

    Blocks with no dispatched energy fall back to spreading over ``Pmax`` per hour and are
    returned in the flag list.
    """
    T = case.T
    bhat = np.array([[sg.b] * T for sg in case.sgs], dtype=float).reshape(len(case.sgs), T)
    flags = []
    for g, sg in enumerate(case.sgs):
        for t_on, t_off, started in online_intervals(schedule.u[g], sg.u0):
            n = t_off - t_on
            fixed = sg.c * n + (sg.s if started else 0.0)
            energy = float(np.sum(schedule.P[g, t_on:t_off]))
            if energy > 1e-9:
                bhat[g, t_on:t_off] = sg.b + fixed / energy
            else:
                flags.append((sg.id, t_on, t_off))
                log.warning("unit %s has no dispatched energy over [%d, %d); spreading fixed cost over Pmax",
                            sg.id, t_on, t_off)
                bhat[g, t_on:t_off] = sg.b + (fixed / (n * sg.Pmax) if sg.Pmax > 0 else 0.0)
    return bhat, flags


# --------------------------------------------------------------------------- hourly relaxed problems


@dataclass
class _Hourly:
    var: VarIndex
    Q: object
    c: np.ndarray
    eq: Rows
    le: Rows


def _hourly_problem(case: SystemCase, schedule: DecisionSchedule, margins: ChanceMargins, agg: AggregateError,
                    t: int, p_prev: np.ndarray, ucost: np.ndarray, bcoef: np.ndarray, relaxed: np.ndarray,
                    inertia: bool) -> _Hourly:
    nG, nE = len(case.sgs), len(case.ess)
    buses = list(case.network.buses)
    bus_pos = {b: k for k, b in enumerate(buses)}
    prm = case.params
    M, S = agg.Mrt[t], agg.Srt[t]
    var = VarIndex()
    P = var.add("P", (nG, 1))
    al = var.add("alpha", (nG, 1))
    u = var.add("u", (nG, 1))
    Pd = var.add("Pd", (nE, 1))
    Pc = var.add("Pc", (nE, 1))
    ad = var.add("ad", (nE, 1))
    ac = var.add("ac", (nE, 1))
    He = var.add("He", (nE, 1))
    th = var.add("theta", (len(buses), 1))
    n = var.n
    eq, le = Rows(), Rows()
    qi, qj, qv = [], [], []
    c = np.zeros(n)
    for g, sg in enumerate(case.sgs):
        p, a_, uu = P[g, 0], al[g, 0], u[g, 0]
        a2 = 2.0 * sg.a
        qi += [p, p, a_, a_]
        qj += [p, a_, p, a_]
        qv += [a2, a2 * M, a2 * M, a2 * (M**2 + S**2)]
        c[p] = bcoef[g]
        c[a_] = bcoef[g] * M
        c[uu] = ucost[g]
        le.add([p], [1.0], sg.RU + p_prev[g], "ramp_up", g, t)
        le.add([p], [-1.0], sg.RD - p_prev[g], "ramp_dn", g, t)
        le.add([a_, uu], [1.0, -1.0], 0.0, "part_hi", g, t)
        le.add([a_], [-1.0], 0.0, "alpha_lo", g, t)
        le.add([p, uu, a_], [1.0, -sg.Pmax, margins.g_up[g, t]], 0.0, "cap_up", g, t)
        le.add([p, uu, a_], [-1.0, sg.Pmin, margins.g_dn[g, t]], 0.0, "cap_dn", g, t)
        if relaxed[g]:
            le.add([uu], [-1.0], 0.0, "u_lo", g, t)
            le.add([uu], [1.0], 1.0, "u_hi", g, t)
        else:
            eq.add([uu], [1.0], schedule.u[g, t], "fix_u", g, t)
    for e in range(nE):
        for blk, name in ((Pd, "Pd"), (Pc, "Pc"), (ad, "ad"), (ac, "ac"), (He, "He")):
            eq.add([blk[e, 0]], [1.0], getattr(schedule, name)[e, t], "fix_es", e, t)
    base = prm.base_mva
    for l, ln in enumerate(case.network.lines):
        i, j = bus_pos[ln.i], bus_pos[ln.j]
        k = base * ln.B
        le.add([th[i, 0], th[j, 0]], [k, -k], ln.Fmax, "flow_up", l, t)
        le.add([th[i, 0], th[j, 0]], [-k, k], ln.Fmax, "flow_dn", l, t)
    _add_balance(case, eq, var, [t], bus_pos)
    # _add_balance stores the hour position (0); restore the absolute hour for reporting
    for r in range(len(eq.t)):
        if eq.family[r] == "balance":
            eq.t[r] = t
    eq.add([th[bus_pos[case.network.slack_bus], 0]], [1.0], 0.0, "slack", -1, t)
    eq.add(list(al[:, 0]) + list(ad[:, 0]) + list(ac[:, 0]), [1.0] * nG + [1.0] * nE + [-1.0] * nE, 1.0,
           "reserve", -1, t)
    if inertia:
        req = case.inertia_requirement() - inertia_offset(case, margins, t)
        le.add(list(u[:, 0]) + list(He[:, 0]), [-sg.H * sg.Pmax for sg in case.sgs] + [-es.Pe_max for es in case.ess],
               -req, "inertia", -1, t)
    Q = sp.csr_matrix((qv, (qi, qj)), shape=(n, n))
    return _Hourly(var, Q, c, eq, le)


_SG_FAMILIES = {"cap_up": "mu_plus", "cap_dn": "mu_minus", "ramp_up": "upsilon_plus", "ramp_dn": "upsilon_minus",
                "part_hi": "rho_plus", "alpha_lo": "rho_minus"}


@dataclass
class HourResult:
    t: int
    lam: np.ndarray
    gamma: float
    chi: float
    sg_duals: dict
    kappa_plus: np.ndarray
    kappa_minus: np.ndarray
    kappa_fixed: np.ndarray
    primal: dict


def price_hour(case: SystemCase, schedule: DecisionSchedule, margins: ChanceMargins, agg: AggregateError, t: int,
               p_prev: np.ndarray, ucost: np.ndarray, bcoef: np.ndarray, relax_offline: bool = False,
               inertia: bool = True, tol: float = 1e-10, scheme: str = "") -> HourResult:
    """Solve one hourly relaxed pricing problem given the previous hour's output ``p_prev``."""
    nG = len(case.sgs)
    relaxed = np.array([relax_offline or schedule.u[g, t] > 0.5 for g in range(nG)], dtype=bool)
    hp = _hourly_problem(case, schedule, margins, agg, t, p_prev, ucost, bcoef, relaxed, inertia)
    A = hp.eq.matrix(hp.var.n)
    G = hp.le.matrix(hp.var.n)
    res = solve_qp(hp.Q, hp.c, A, np.asarray(hp.eq.rhs), G, np.asarray(hp.le.rhs), tol=tol)
    if not res.ok:
        fam = _hourly_culprit(hp, res)
        raise InfeasibleError(f"{scheme} pricing problem at hour {t} is {res.status}", fam)
    lam = np.zeros(len(case.network.buses))
    gamma = chi = 0.0
    kap_fix = np.zeros(nG)
    for f, unit, val in zip(hp.eq.family, hp.eq.unit, res.y):
        if f == "balance":
            lam[unit] = -val
        elif f == "reserve":
            gamma = -val
        elif f == "fix_u":
            kap_fix[unit] = val
    sg_duals = {name: np.zeros(nG) for name in _SG_FAMILIES.values()}
    kap_p, kap_m = np.zeros(nG), np.zeros(nG)
    for f, unit, val in zip(hp.le.family, hp.le.unit, res.z):
        if f in _SG_FAMILIES:
            sg_duals[_SG_FAMILIES[f]][unit] = val
        elif f == "u_hi":
            kap_p[unit] = val
        elif f == "u_lo":
            kap_m[unit] = val
        elif f == "inertia":
            chi = val
    primal = {name: res.x[hp.var[name][:, 0]] for name in ("P", "alpha", "u")}
    return HourResult(t, lam, float(gamma), float(chi), sg_duals, kap_p, kap_m, kap_fix, primal)


def _relaxed_pricing(case: SystemCase, schedule: DecisionSchedule, margins: ChanceMargins | None,
                     ucost: np.ndarray, bcoef: np.ndarray, scheme: str, relax_offline: bool,
                     inertia: bool, tol: float) -> PriceSeries:
    agg = aggregate_errors(case)
    margins = margins if margins is not None else compute_margins(case, agg)
    T, nG = case.T, len(case.sgs)
    buses = tuple(case.network.buses)
    lam = np.zeros((len(buses), T))
    gamma = np.zeros(T)
    chi = np.zeros(T)
    sg_duals = {name: np.zeros((nG, T)) for name in _SG_FAMILIES.values()}
    kap_p, kap_m, kap_fix = np.zeros((nG, T)), np.zeros((nG, T)), np.zeros((nG, T))
    primal = {k: np.zeros((nG, T)) for k in ("P", "alpha", "u")}
    p_prev = np.array([sg.p0 for sg in case.sgs], dtype=float)
    for t in range(T):
        hr = price_hour(case, schedule, margins, agg, t, p_prev, ucost[:, t], bcoef[:, t], relax_offline,
                        inertia, tol, scheme)
        lam[:, t], gamma[t], chi[t] = hr.lam, hr.gamma, hr.chi
        for name, arr in hr.sg_duals.items():
            sg_duals[name][:, t] = arr
        kap_p[:, t], kap_m[:, t], kap_fix[:, t] = hr.kappa_plus, hr.kappa_minus, hr.kappa_fixed
        for name, arr in hr.primal.items():
            primal[name][:, t] = arr
        p_prev = hr.primal["P"].copy()
    duals = DualRecord(lambda_=lam, gamma=gamma, chi=chi, kappa=kap_p - kap_m + kap_fix,
                       extra={"kappa_plus": kap_p, "kappa_minus": kap_m, "kappa_fixed": kap_fix}, **sg_duals)
    meta = {"relax_offline": relax_offline, "tolerance": tol, "inertia_row": inertia}
    return PriceSeries(scheme, buses, lam, gamma, chi, meta, duals=duals, primal=primal)


def _hourly_culprit(hp: _Hourly, res) -> str | None:
    G = hp.le.matrix(hp.var.n)
    viol = G @ res.x - np.asarray(hp.le.rhs)
    if viol.size == 0:
        return None
    return hp.le.family[int(np.argmax(viol))]


def achp_prices(case: SystemCase, schedule: DecisionSchedule, margins: ChanceMargins | None = None,
                alloc: StartupAllocation | None = None, relax_offline: bool = False, tol: float = 1e-10,
                inertia: bool = True) -> PriceSeries:
    """Hour-by-hour relaxed pricing with no-load plus allocated start-up cost carried on ``u``."""
    alloc = alloc or allocate_startup(case, schedule)
    if alloc.s_tilde.shape != schedule.u.shape:
        raise ValueError("start-up allocation does not match the schedule")
    ucost = np.array([[sg.c] * case.T for sg in case.sgs], dtype=float).reshape(len(case.sgs), case.T)
    ucost = ucost + alloc.s_tilde
    bcoef = np.array([[sg.b] * case.T for sg in case.sgs], dtype=float).reshape(len(case.sgs), case.T)
    ps = _relaxed_pricing(case, schedule, margins, ucost, bcoef, "ACHP", relax_offline, inertia, tol)
    ps.metadata["allocation"] = alloc.rule
    ps.metadata["ucost"] = ucost.tolist()
    return ps


def aip_prices(case: SystemCase, schedule: DecisionSchedule, margins: ChanceMargins | None = None,
               relax_offline: bool = False, tol: float = 1e-10, inertia: bool = True) -> PriceSeries:
    """Hour-by-hour relaxed pricing with fixed costs folded into an average energy coefficient."""
    bhat, flags = average_incremental_b(case, schedule)
    ucost = np.zeros((len(case.sgs), case.T))
    ps = _relaxed_pricing(case, schedule, margins, ucost, bhat, "AIP", relax_offline, inertia, tol)
    ps.metadata["bhat"] = bhat.tolist()
    ps.metadata["zero_energy_blocks"] = [list(f) for f in flags]
    return ps


# --------------------------------------------------------------------------- closed-form assemblies


def assemble_lambda(case: SystemCase, agg: AggregateError, P: np.ndarray, alpha: np.ndarray, duals: DualRecord,
                    g: int, t: int, bcoef: float | None = None, coupled: bool = True) -> float:
    """Energy price implied by the dispatch stationarity of unit ``g`` at hour ``t``.

    ``coupled`` adds the next-hour ramp multipliers (full-horizon problem); hourly
    pricing problems have none.
    """
    sg = case.sgs[g]
    b = sg.b if bcoef is None else bcoef
    T = P.shape[1]
    up_next = duals.upsilon_plus[g, t + 1] if coupled and t + 1 < T else 0.0
    dn_next = duals.upsilon_minus[g, t + 1] if coupled and t + 1 < T else 0.0
    return (2 * sg.a * (P[g, t] + agg.Mrt[t] * alpha[g, t]) + b
            + duals.mu_plus[g, t] - duals.mu_minus[g, t]
            + (duals.upsilon_plus[g, t] - up_next) - (duals.upsilon_minus[g, t] - dn_next))


def assemble_gamma(case: SystemCase, agg: AggregateError, margins: ChanceMargins, P: np.ndarray, alpha: np.ndarray,
                   ad: np.ndarray, ac: np.ndarray, duals: DualRecord, t: int,
                   bcoef: np.ndarray | None = None) -> float:
    """Reserve price from the participation stationarity of every SG, summed through the simplex row.

    Units with no curvature in alpha keep their primal alpha on the right-hand side.
    Returns nan when no unit has curvature.
    """
    M, S = agg.Mrt[t], agg.Srt[t]
    rhs = 1.0 - float(np.sum(ad[:, t]) - np.sum(ac[:, t]))
    inv_sum = 0.0
    for g, sg in enumerate(case.sgs):
        b = sg.b if bcoef is None else bcoef[g, t]
        curv = 2 * sg.a * (M**2 + S**2)
        if curv <= 0:
            rhs -= alpha[g, t]
            continue
        shift = (2 * sg.a * M * P[g, t] + b * M + duals.mu_plus[g, t] * margins.g_up[g, t]
                 + duals.mu_minus[g, t] * margins.g_dn[g, t] + duals.rho_plus[g, t] - duals.rho_minus[g, t])
        rhs += shift / curv
        inv_sum += 1.0 / curv
    if inv_sum == 0:
        return float("nan")
    return rhs / inv_sum


def assemble_chi_relaxed(case: SystemCase, margins: ChanceMargins, ucost: np.ndarray, u: np.ndarray, He: np.ndarray,
                         duals: DualRecord, t: int) -> float:
    """Inertia price from commitment stationarity of the hourly relaxed problem; nan when undefined."""
    den = case.inertia_requirement() - non_sg_inertia(case, margins, He, t)
    if den <= 0:
        return float("nan")
    kp = duals.extra.get("kappa_plus", np.zeros_like(u))
    km = duals.extra.get("kappa_minus", np.zeros_like(u))
    num = 0.0
    for g, sg in enumerate(case.sgs):
        num += u[g, t] * (ucost[g, t] - duals.mu_plus[g, t] * sg.Pmax + duals.mu_minus[g, t] * sg.Pmin
                          - duals.rho_plus[g, t] + kp[g, t] - km[g, t])
    return num / den


@dataclass
class KktRecord:
    hour: int
    quantity: str
    assembled: float
    dual: float
    ok: bool
    note: str = ""


def kkt_price_audit(case: SystemCase, margins: ChanceMargins, prices: PriceSeries, primal: dict,
                    ad: np.ndarray, ac: np.ndarray, coupled: bool, bcoef: np.ndarray | None = None,
                    tol: float = 1e-5, interior_tol: float = 1e-4) -> list[KktRecord]:
    """Compare closed-form energy/reserve prices against solver duals hour by hour.

    The energy check uses a committed unit strictly inside its capacity and ramp
    limits; hours without one are skipped. Mismatches are logged with the
    multipliers that were active.
    """
    agg = aggregate_errors(case)
    duals = prices.duals
    P, alpha, u = primal["P"], primal["alpha"], primal["u"]
    out = []
    for t in range(case.T):
        g = _interior_unit(case, margins, primal, duals, t, interior_tol)
        if g is not None:
            b = None if bcoef is None else bcoef[g, t]
            val = assemble_lambda(case, agg, P, alpha, duals, g, t, b, coupled)
            dual = prices.lam_at(case.sgs[g].bus)[t]
            out.append(_record(t, f"lambda@{case.sgs[g].id}", val, dual, tol, duals, g))
        val = assemble_gamma(case, agg, margins, P, alpha, ad, ac, duals, t, bcoef)
        if np.isfinite(val):
            out.append(_record(t, "gamma", val, prices.gamma[t], tol, duals, None))
    return out


def _interior_unit(case, margins, primal, duals, t, tol):
    best, best_room = None, tol
    for g, sg in enumerate(case.sgs):
        if primal["u"][g, t] < 1 - 1e-6:
            continue
        P, al = primal["P"][g, t], primal["alpha"][g, t]
        room = min(sg.Pmax - margins.g_up[g, t] * al - P, P - sg.Pmin - margins.g_dn[g, t] * al)
        active = max(duals.upsilon_plus[g, t], duals.upsilon_minus[g, t])
        if room > best_room and active < 1e-7:
            best, best_room = g, room
    return best


def _record(t, name, val, dual, tol, duals, g):
    ok = abs(val - dual) <= tol
    note = ""
    if not ok:
        active = []
        for fam in ("mu_plus", "mu_minus", "upsilon_plus", "upsilon_minus", "rho_plus", "rho_minus"):
            arr = getattr(duals, fam)
            rows = [g] if g is not None else range(arr.shape[0])
            for k in rows:
                if arr[k, t] > 1e-7:
                    active.append(f"{fam}[{k}]")
        note = "active: " + (", ".join(active) or "none")
        log.warning("hour %d %s: assembled %.9g vs dual %.9g (%s)", t, name, val, dual, note)
    return KktRecord(t, name, float(val), float(dual), ok, note)
