"""Deterministic inertia-aware UC as a structured QP with integer commitment columns."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .case import SystemCase
from .uncertainty import AggregateError, ChanceMargins, aggregate_errors, compute_margins


@dataclass(frozen=True)
class ModelOptions:
    inertia: bool = True
    margin_convention: str = "exact"


# Row families grouped the way the census reports them. Two-sided pairs share a key.
CENSUS_FAMILY = {
    "logic": "logic", "min_up": "min_up", "min_down": "min_down",
    "ramp_up": "ramp", "ramp_dn": "ramp",
    "part_hi": "participation",
    "cap_up": "capacity", "cap_dn": "capacity",
    "es_dis": "es_discharge", "es_chg": "es_charge",
    "e_max": "es_energy", "e_min": "es_energy", "soc": "soc",
    "flow_up": "flow", "flow_dn": "flow",
    "balance": "balance", "reserve": "reserve", "inertia": "inertia", "slack": "slack",
}
_PAIR = {"ramp_dn": "ramp_up", "flow_dn": "flow_up"}

# Index space of each family's rows: which entity the ``unit`` column refers to.
FAMILY_SPACE = {
    "logic": "sg", "min_up": "sg", "min_down": "sg", "ramp_up": "sg", "ramp_dn": "sg",
    "part_hi": "sg", "alpha_lo": "sg", "cap_up": "sg", "cap_dn": "sg",
    "u_lo": "sg", "u_hi": "sg", "v_lo": "sg", "w_lo": "sg", "fix_u": "sg", "fix_P": "sg", "fix_alpha": "sg",
    "es_dis": "es", "es_chg": "es", "e_max": "es", "e_min": "es", "soc": "es",
    "pd_lo": "es", "pc_lo": "es", "ad_lo": "es", "ad_hi": "es", "ac_lo": "es", "ac_hi": "es",
    "he_lo": "es", "he_hi": "es", "fix_es": "es",
    "flow_up": "line", "flow_dn": "line",
    "balance": "bus", "slack": "hour", "reserve": "hour", "inertia": "hour",
}


@dataclass
class Rows:
    """Sparse row block in triplet form with per-row metadata."""

    ri: list = field(default_factory=list)
    ci: list = field(default_factory=list)
    vals: list = field(default_factory=list)
    rhs: list = field(default_factory=list)
    family: list = field(default_factory=list)
    unit: list = field(default_factory=list)
    t: list = field(default_factory=list)

    def add(self, cols, coefs, rhs, family, unit, t) -> int:
        r = len(self.rhs)
        for col, v in zip(cols, coefs):
            if v != 0.0:
                self.ri.append(r)
                self.ci.append(int(col))
                self.vals.append(float(v))
        self.rhs.append(float(rhs))
        self.family.append(family)
        self.unit.append(unit)
        self.t.append(t)
        return r

    def __len__(self) -> int:
        return len(self.rhs)

    def matrix(self, n: int) -> sp.csr_matrix:
        return sp.csr_matrix((self.vals, (self.ri, self.ci)), shape=(len(self.rhs), n))


class VarIndex:
    def __init__(self):
        self.n = 0
        self.blocks: dict[str, np.ndarray] = {}

    def add(self, name: str, shape) -> np.ndarray:
        size = int(np.prod(shape))
        idx = np.arange(self.n, self.n + size).reshape(shape)
        self.n += size
        self.blocks[name] = idx
        return idx

    def __getitem__(self, name: str) -> np.ndarray:
        return self.blocks[name]


@dataclass
class Problem:
    """A built model: variable blocks, objective, equality and inequality rows.

    ``qp(fix)`` produces the QP for a partial assignment of columns; fixed columns
    lose their bound rows and gain an equality row (family ``fix_*``).
    """

    case: SystemCase
    margins: ChanceMargins
    agg: AggregateError
    options: ModelOptions
    var: VarIndex
    Q: sp.csr_matrix
    c: np.ndarray
    eq: Rows
    le: Rows
    integer_cols: np.ndarray
    bound_rows: dict[int, list[int]]
    census: dict[str, int]

    @property
    def n(self) -> int:
        return self.var.n

    def qp(self, fix: dict[int, float] | None = None, fix_family: dict[int, tuple] | None = None):
        """Return ``(Q, c, A, b, G, h, eq_meta, le_meta)``.

        ``fix`` maps column -> value. ``fix_family`` optionally maps a fixed column
        to ``(family, unit, t)`` metadata for its equality row.
        """
        fix = fix or {}
        n = self.n
        A = self.eq.matrix(n)
        b = np.asarray(self.eq.rhs)
        eq_meta = (list(self.eq.family), list(self.eq.unit), list(self.eq.t))
        G = self.le.matrix(n)
        h = np.asarray(self.le.rhs)
        le_meta = (list(self.le.family), list(self.le.unit), list(self.le.t))
        if fix:
            drop = set()
            for col in fix:
                drop.update(self.bound_rows.get(col, ()))
            keep = np.array([r for r in range(len(h)) if r not in drop], dtype=int)
            G = G[keep]
            h = h[keep]
            le_meta = tuple([m[r] for r in keep] for m in le_meta)
            cols = np.fromiter(fix.keys(), dtype=int, count=len(fix))
            vals = np.fromiter(fix.values(), dtype=float, count=len(fix))
            F = sp.csr_matrix((np.ones(len(cols)), (np.arange(len(cols)), cols)), shape=(len(cols), n))
            A = sp.vstack([A, F], format="csr")
            b = np.concatenate([b, vals])
            fam = fix_family or {}
            extra = [fam.get(int(col), ("fix", -1, -1)) for col in cols]
            eq_meta = (
                eq_meta[0] + [e[0] for e in extra],
                eq_meta[1] + [e[1] for e in extra],
                eq_meta[2] + [e[2] for e in extra],
            )
        return self.Q, self.c, A, b, G, h, eq_meta, le_meta

    def u_fix(self, u: np.ndarray) -> tuple[dict[int, float], dict[int, tuple]]:
        cols = self.var["u"]
        fix, fam = {}, {}
        for g in range(cols.shape[0]):
            for t in range(cols.shape[1]):
                fix[int(cols[g, t])] = float(round(u[g, t]))
                fam[int(cols[g, t])] = ("fix_u", g, t)
        return fix, fam


def census_of(rows: Rows) -> Counter:
    keys = set()
    for fam, unit, t in zip(rows.family, rows.unit, rows.t):
        if fam in CENSUS_FAMILY:
            keys.add((CENSUS_FAMILY[fam], _PAIR.get(fam, fam), unit, t))
    return Counter(k[0] for k in keys)


def inertia_offset(case: SystemCase, margins: ChanceMargins, t: int) -> float:
    """RES contribution to the system inertia row at hour ``t`` (MW s)."""
    return sum((r.inertia_forecast[t] + margins.h[k, t]) * r.Pmax for k, r in enumerate(case.ress))


def system_inertia(case: SystemCase, margins: ChanceMargins, u: np.ndarray, He: np.ndarray, t: int) -> float:
    """Left-hand side of the system inertia row at hour ``t`` (MW s)."""
    firm = sum(u[g, t] * sg.H * sg.Pmax for g, sg in enumerate(case.sgs))
    firm += sum(He[e, t] * es.Pe_max for e, es in enumerate(case.ess))
    return float(firm + inertia_offset(case, margins, t))


def res_injection(case: SystemCase, bus: int, t: int) -> float:
    return sum(r.forecast[t] for r in case.ress if r.bus == bus)


def build_model(case: SystemCase, margins: ChanceMargins | None = None, options: ModelOptions | None = None) -> Problem:
    """Assemble the deterministic chance-constrained UC over the whole horizon."""
    options = options or ModelOptions()
    agg = aggregate_errors(case)
    margins = margins if margins is not None else compute_margins(case, agg, options.margin_convention)
    T = case.T
    _check_dims(case, margins)
    nG, nE = len(case.sgs), len(case.ess)
    buses = list(case.network.buses)
    bus_pos = {b: k for k, b in enumerate(buses)}
    nB = len(buses)
    prm = case.params
    M, S = agg.Mrt, agg.Srt

    var = VarIndex()
    P = var.add("P", (nG, T))
    al = var.add("alpha", (nG, T))
    u = var.add("u", (nG, T))
    v = var.add("v", (nG, T))
    w = var.add("w", (nG, T))
    Pd = var.add("Pd", (nE, T))
    Pc = var.add("Pc", (nE, T))
    ad = var.add("ad", (nE, T))
    ac = var.add("ac", (nE, T))
    He = var.add("He", (nE, T))
    E = var.add("e", (nE, T))
    th = var.add("theta", (nB, T))
    n = var.n

    qi, qj, qv = [], [], []
    c = np.zeros(n)
    eq, le = Rows(), Rows()
    bound_rows: dict[int, list[int]] = {}

    def bound(col, lo=None, hi=None, fam_lo="", fam_hi="", unit=-1, t=-1):
        rows = []
        if lo is not None:
            rows.append(le.add([col], [-1.0], -lo, fam_lo, unit, t))
        if hi is not None:
            rows.append(le.add([col], [1.0], hi, fam_hi, unit, t))
        bound_rows.setdefault(int(col), []).extend(rows)

    for g, sg in enumerate(case.sgs):
        for t in range(T):
            a2 = 2.0 * sg.a
            qi += [P[g, t], P[g, t], al[g, t], al[g, t]]
            qj += [P[g, t], al[g, t], P[g, t], al[g, t]]
            qv += [a2, a2 * M[t], a2 * M[t], a2 * (M[t] ** 2 + S[t] ** 2)]
            c[P[g, t]] = sg.b
            c[al[g, t]] = sg.b * M[t]
            c[u[g, t]] = sg.c
            c[v[g, t]] = sg.s

            if t == 0:
                eq.add([u[g, t], v[g, t], w[g, t]], [1.0, -1.0, 1.0], float(sg.u0), "logic", g, t)
            else:
                eq.add([u[g, t], u[g, t - 1], v[g, t], w[g, t]], [1.0, -1.0, -1.0, 1.0], 0.0, "logic", g, t)
            if t >= sg.TU - 1:
                win = list(range(t - sg.TU + 1, t + 1))
                le.add([v[g, k] for k in win] + [u[g, t]], [1.0] * len(win) + [-1.0], 0.0, "min_up", g, t)
            if t >= sg.TD - 1:
                win = list(range(t - sg.TD + 1, t + 1))
                le.add([w[g, k] for k in win] + [u[g, t]], [1.0] * len(win) + [1.0], 1.0, "min_down", g, t)
            if t == 0:
                le.add([P[g, t]], [1.0], sg.RU + sg.p0, "ramp_up", g, t)
                le.add([P[g, t]], [-1.0], sg.RD - sg.p0, "ramp_dn", g, t)
            else:
                le.add([P[g, t], P[g, t - 1]], [1.0, -1.0], sg.RU, "ramp_up", g, t)
                le.add([P[g, t], P[g, t - 1]], [-1.0, 1.0], sg.RD, "ramp_dn", g, t)
            le.add([al[g, t], u[g, t]], [1.0, -1.0], 0.0, "part_hi", g, t)
            bound(al[g, t], lo=0.0, fam_lo="alpha_lo", unit=g, t=t)
            le.add([P[g, t], u[g, t], al[g, t]], [1.0, -sg.Pmax, margins.g_up[g, t]], 0.0, "cap_up", g, t)
            le.add([P[g, t], u[g, t], al[g, t]], [-1.0, sg.Pmin, margins.g_dn[g, t]], 0.0, "cap_dn", g, t)
            bound(u[g, t], lo=0.0, hi=1.0, fam_lo="u_lo", fam_hi="u_hi", unit=g, t=t)
            bound(v[g, t], lo=0.0, fam_lo="v_lo", unit=g, t=t)
            bound(w[g, t], lo=0.0, fam_lo="w_lo", unit=g, t=t)

    rocof_k = 2.0 * prm.fmax_prime / prm.f0
    nadir_k = 2.0 * prm.dfmax / prm.f0
    for e, es in enumerate(case.ess):
        for t in range(T):
            le.add([Pd[e, t], He[e, t], ad[e, t]], [1.0, rocof_k * es.Pe_max, margins.d[e, t]], es.Pe_max, "es_dis", e, t)
            le.add([Pc[e, t], He[e, t], ac[e, t]], [1.0, rocof_k * es.Pe_max, margins.c[e, t]], es.Pc_max, "es_chg", e, t)
            le.add([E[e, t], He[e, t]], [1.0, nadir_k * es.Pe_max], es.Emax, "e_max", e, t)
            le.add([E[e, t], He[e, t]], [-1.0, nadir_k * es.Pe_max], -es.Emin, "e_min", e, t)
            cols = [E[e, t], Pc[e, t], ac[e, t], Pd[e, t], ad[e, t]]
            coefs = [1.0, -es.k, -es.k * M[t], 1.0 / es.k, M[t] / es.k]
            if t == 0:
                eq.add(cols, coefs, es.e0, "soc", e, t)
            else:
                eq.add(cols + [E[e, t - 1]], coefs + [-1.0], 0.0, "soc", e, t)
            bound(Pd[e, t], lo=0.0, fam_lo="pd_lo", unit=e, t=t)
            bound(Pc[e, t], lo=0.0, fam_lo="pc_lo", unit=e, t=t)
            bound(ad[e, t], lo=0.0, hi=1.0, fam_lo="ad_lo", fam_hi="ad_hi", unit=e, t=t)
            bound(ac[e, t], lo=0.0, hi=1.0, fam_lo="ac_lo", fam_hi="ac_hi", unit=e, t=t)
            # without the inertia row storage offers no inertia
            bound(He[e, t], lo=0.0, hi=es.He_max if options.inertia else 0.0, fam_lo="he_lo", fam_hi="he_hi",
                  unit=e, t=t)

    base = prm.base_mva
    for l, ln in enumerate(case.network.lines):
        i, j = bus_pos[ln.i], bus_pos[ln.j]
        for t in range(T):
            k = base * ln.B
            le.add([th[i, t], th[j, t]], [k, -k], ln.Fmax, "flow_up", l, t)
            le.add([th[i, t], th[j, t]], [-k, k], ln.Fmax, "flow_dn", l, t)

    _add_balance(case, eq, var, range(T), bus_pos)
    for t in range(T):
        eq.add([th[bus_pos[case.network.slack_bus], t]], [1.0], 0.0, "slack", -1, t)
        eq.add(list(al[:, t]) + list(ad[:, t]) + list(ac[:, t]), [1.0] * nG + [1.0] * nE + [-1.0] * nE, 1.0,
               "reserve", -1, t)
        if options.inertia:
            req = case.inertia_requirement() - inertia_offset(case, margins, t)
            le.add(list(u[:, t]) + list(He[:, t]), [-sg.H * sg.Pmax for sg in case.sgs] + [-es.Pe_max for es in case.ess],
                   -req, "inertia", -1, t)

    Q = sp.csr_matrix((qv, (qi, qj)), shape=(n, n))
    census = dict(census_of(eq) + census_of(le))
    for fam in set(CENSUS_FAMILY.values()):
        census.setdefault(fam, 0)
    return Problem(case=case, margins=margins, agg=agg, options=options, var=var, Q=Q, c=c, eq=eq, le=le,
                   integer_cols=u.ravel().copy(), bound_rows=bound_rows, census=census)


def _add_balance(case: SystemCase, eq: Rows, var: VarIndex, hours, bus_pos: dict[int, int]) -> None:
    base = case.params.base_mva
    P, Pd, Pc, th = var["P"], var["Pd"], var["Pc"], var["theta"]
    for t_pos, t in enumerate(hours):
        for bus, i in bus_pos.items():
            cols, coefs = [], []
            for g, sg in enumerate(case.sgs):
                if sg.bus == bus:
                    cols.append(P[g, t_pos])
                    coefs.append(1.0)
            for e, es in enumerate(case.ess):
                if es.bus == bus:
                    cols += [Pd[e, t_pos], Pc[e, t_pos]]
                    coefs += [1.0, -1.0]
            for ln in case.network.lines:
                k = base * ln.B
                if ln.i == bus:
                    cols += [th[i, t_pos], th[bus_pos[ln.j], t_pos]]
                    coefs += [-k, k]
                elif ln.j == bus:
                    cols += [th[i, t_pos], th[bus_pos[ln.i], t_pos]]
                    coefs += [-k, k]
            rhs = case.bus_load(bus, t) - res_injection(case, bus, t)
            eq.add(cols, coefs, rhs, "balance", i, t_pos)


def _check_dims(case: SystemCase, margins: ChanceMargins) -> None:
    T = case.T
    for name, arr, rows in (("g_up", margins.g_up, len(case.sgs)), ("g_dn", margins.g_dn, len(case.sgs)),
                            ("d", margins.d, len(case.ess)), ("c", margins.c, len(case.ess)),
                            ("h", margins.h, len(case.ress))):
        if arr.shape != (rows, T):
            raise ValueError(f"margin block {name} has shape {arr.shape}, expected {(rows, T)}")
    for bus, series in case.load.items():
        if len(series) < T:
            raise ValueError(f"load series for bus {bus} is shorter than T={T}")
