"""Per-unit settlement, make-whole uplift, RES opportunity payments and reliability-must-run overlays."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .case import SystemCase
from .model import Problem, system_inertia
from .pricing import PriceSeries
from .solver import DecisionSchedule, DualRecord, InfeasibleError, solve_fixed_qp
from .uncertainty import ChanceMargins, aggregate_errors, expected_sg_cost

RESERVE_CONVENTION = "participation factor times a unit requirement"

UNIT_COLUMNS = ("unit", "kind", "bus", "cost", "energy_revenue", "reserve_revenue", "inertia_revenue", "uplift",
                "opportunity", "net_profit")


@dataclass
class UnitSettlement:
    unit: str
    kind: str
    bus: int
    cost: float
    energy_revenue: float
    reserve_revenue: float
    inertia_revenue: float
    uplift: float
    opportunity: float = 0.0

    @property
    def market_revenue(self) -> float:
        return self.energy_revenue + self.reserve_revenue + self.inertia_revenue

    @property
    def net_profit(self) -> float:
        return self.market_revenue + self.uplift + self.opportunity - self.cost

    def row(self) -> dict:
        return {k: getattr(self, k) for k in UNIT_COLUMNS}


@dataclass
class SettlementReport:
    scheme: str
    case_name: str
    eta: float | None
    units: list[UnitSettlement]
    load_energy_payment: float
    metadata: dict = field(default_factory=dict)

    @property
    def total_uplift(self) -> float:
        return sum(u.uplift for u in self.units)

    @property
    def total_opportunity(self) -> float:
        return sum(u.opportunity for u in self.units)

    @property
    def consumer_payment(self) -> float:
        """Everything passed through to load: market revenues of all units plus side payments."""
        return sum(u.market_revenue + u.uplift + u.opportunity for u in self.units)

    def profit_by_kind(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for u in self.units:
            cls = "RES" if u.kind in ("PV", "WT") else u.kind
            out[cls] = out.get(cls, 0.0) + u.net_profit
        return out

    def unit(self, uid: str) -> UnitSettlement:
        for u in self.units:
            if u.unit == uid:
                return u
        raise KeyError(uid)

    def summary(self) -> dict:
        return {
            "scheme": self.scheme, "case": self.case_name, "eta": self.eta,
            "total_uplift": self.total_uplift, "total_opportunity": self.total_opportunity,
            "consumer_payment": self.consumer_payment, "load_energy_payment": self.load_energy_payment,
            "profit_by_kind": self.profit_by_kind(), **self.metadata,
        }

    def write(self, directory: str | Path, stem: str | None = None) -> list[Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        stem = stem or f"settlement_{self.scheme.lower()}"
        p_csv, p_json = d / f"{stem}.csv", d / f"{stem}.json"
        with open(p_csv, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(UNIT_COLUMNS)
            for u in self.units:
                row = u.row()
                wr.writerow([row[k] if isinstance(row[k], (str, int)) else repr(float(row[k])) for k in UNIT_COLUMNS])
        p_json.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return [p_csv, p_json]

    @staticmethod
    def read_units(path: str | Path) -> list[UnitSettlement]:
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        out = []
        for r in rows:
            out.append(UnitSettlement(
                unit=r["unit"], kind=r["kind"], bus=int(r["bus"]), cost=float(r["cost"]),
                energy_revenue=float(r["energy_revenue"]), reserve_revenue=float(r["reserve_revenue"]),
                inertia_revenue=float(r["inertia_revenue"]), uplift=float(r["uplift"]),
                opportunity=float(r["opportunity"])))
        return out


def res_opportunity(case: SystemCase, prices: PriceSeries) -> dict[str, float]:
    """Lost-energy payment for RES held below maximum available power, priced at the local energy price."""
    out = {}
    for r in case.ress:
        lam = prices.lam_at(r.bus)
        out[r.id] = float(sum(lam[t] * (r.mppt[t] - r.forecast[t]) for t in range(case.T)))
    return out


def sg_costs(case: SystemCase, schedule: DecisionSchedule) -> np.ndarray:
    agg = aggregate_errors(case)
    return np.array([
        sum(expected_sg_cost(sg, schedule.P[g, t], schedule.alpha[g, t], int(round(schedule.u[g, t])),
                             int(round(schedule.v[g, t])), agg.Mrt[t], agg.Srt[t]) for t in range(case.T))
        for g, sg in enumerate(case.sgs)
    ])


def settle(case: SystemCase, schedule: DecisionSchedule, prices: PriceSeries, eta: float | None = None,
           opportunity: bool = True) -> SettlementReport:
    """Settle every unit at the scheme's prices and pay the make-whole uplift per unit over the horizon.

    RES units are credited inertia revenue and, when ``opportunity`` is set, the
    lost-energy payment; units receiving both are listed under ``double_paid``.
    """
    buses = set(prices.buses)
    T = case.T
    if prices.T != T:
        raise ValueError(f"price series spans {prices.T} hours, case has {T}")
    units: list[UnitSettlement] = []

    def lam(bus):
        if bus not in buses:
            raise ValueError(f"bus {bus} has no energy price in the {prices.scheme} series")
        return prices.lam_at(bus)

    costs = sg_costs(case, schedule)
    for g, sg in enumerate(case.sgs):
        l = lam(sg.bus)
        energy = float(np.dot(l, schedule.P[g]))
        reserve = float(np.dot(prices.gamma, schedule.alpha[g]))
        inertia = float(np.dot(prices.chi, np.round(schedule.u[g]))) * sg.H * sg.Pmax
        units.append(_make_whole(sg.id, "SG", sg.bus, float(costs[g]), energy, reserve, inertia))
    for e, es in enumerate(case.ess):
        l = lam(es.bus)
        energy = float(np.dot(l, schedule.Pd[e] - schedule.Pc[e]))
        reserve = float(np.dot(prices.gamma, schedule.ad[e] - schedule.ac[e]))
        inertia = float(np.dot(prices.chi, schedule.He[e])) * es.Pe_max
        units.append(_make_whole(es.id, "ES", es.bus, 0.0, energy, reserve, inertia))
    opp = res_opportunity(case, prices) if opportunity else {}
    double = []
    for r in case.ress:
        l = lam(r.bus)
        energy = float(np.dot(l, r.forecast))
        inertia = float(np.dot(prices.chi, r.inertia_forecast)) * r.Pmax
        us = _make_whole(r.id, r.kind, r.bus, 0.0, energy, 0.0, inertia)
        us.opportunity = opp.get(r.id, 0.0)
        if us.opportunity > 1e-9 and inertia > 1e-9:
            double.append(r.id)
        units.append(us)
    load_pay = float(sum(np.dot(lam(bus), np.asarray(series[:T])) for bus, series in case.load.items()))
    meta = {"reserve_quantity": RESERVE_CONVENTION, "double_paid": double,
            "uplift_basis": "per unit over the horizon"}
    return SettlementReport(prices.scheme, case.name, eta, units, load_pay, meta)


def _make_whole(uid, kind, bus, cost, energy, reserve, inertia) -> UnitSettlement:
    uplift = max(0.0, cost - (energy + reserve + inertia))
    return UnitSettlement(uid, kind, bus, cost, energy, reserve, inertia, uplift)


# --------------------------------------------------------------------------- reliability must-run


class RmrError(RuntimeError):
    pass


@dataclass
class RmrOverlay:
    u: np.ndarray
    added: np.ndarray  # bool (nG, T): unit-hours committed out of market
    deficits: np.ndarray  # requirement shortfall per hour before the overlay

    @property
    def added_units(self) -> list[int]:
        return sorted(set(np.nonzero(self.added)[0].tolist()))


def inertia_deficits(case: SystemCase, margins: ChanceMargins, schedule: DecisionSchedule,
                     tol: float = 1e-6) -> np.ndarray:
    req = case.inertia_requirement()
    short = np.array([req - system_inertia(case, margins, schedule.u, schedule.He, t) for t in range(case.T)])
    return np.where(short > tol * max(1.0, req), short, 0.0)


def rmr_select(case: SystemCase, base_schedule: DecisionSchedule, margins: ChanceMargins,
               storage_credit: str = "schedule") -> RmrOverlay:
    """Commit offline SGs, cheapest per MW at minimum output first, until every hour meets the requirement.

    ``storage_credit`` counts storage inertia at the base schedule's level ("schedule")
    or at full capability ("max", the re-dispatch may raise it). Added blocks are then
    extended to respect minimum up and down times.
    """
    if storage_credit not in ("schedule", "max"):
        raise ValueError(f"unknown storage credit {storage_credit!r}")
    T, nG = case.T, len(case.sgs)
    u = np.round(base_schedule.u).astype(float)
    added = np.zeros((nG, T), dtype=bool)
    req = case.inertia_requirement()
    deficits = np.zeros(T)
    He = base_schedule.He
    if storage_credit == "max":
        He = np.array([[es.He_max] * T for es in case.ess]).reshape(base_schedule.He.shape)
    order = sorted(range(nG), key=lambda g: (case.sgs[g].cost_at_pmin_per_mw(), case.sgs[g].id))
    for t in range(T):
        deficits[t] = max(0.0, req - system_inertia(case, margins, u, base_schedule.He, t))
        short = req - system_inertia(case, margins, u, He, t)
        tol = 1e-6 * max(1.0, req)
        for g in order:
            if short <= tol:
                break
            if u[g, t] > 0.5 or case.sgs[g].H * case.sgs[g].Pmax <= 0:
                continue
            u[g, t] = 1.0
            added[g, t] = True
            short -= case.sgs[g].H * case.sgs[g].Pmax
        if short > tol:
            raise RmrError(f"inertia requirement unattainable at hour {t} even with every SG online "
                           f"(short by {short:.6g} MW s)")
    _repair_min_times(case, u, added)
    return RmrOverlay(u=u, added=added, deficits=deficits)


def _repair_min_times(case: SystemCase, u: np.ndarray, added: np.ndarray) -> None:
    T = case.T
    for g, sg in enumerate(case.sgs):
        changed = True
        while changed:
            changed = False
            row = np.concatenate([[sg.u0], u[g]])
            # extend short on-blocks forward
            t = 1
            while t <= T:
                if row[t] > 0.5 and row[t - 1] < 0.5:
                    end = t
                    while end <= T and row[end] > 0.5:
                        end += 1
                    need = t + sg.TU
                    if end < need and end <= T:
                        for k in range(end, min(need, T + 1)):
                            if row[k] < 0.5:
                                row[k] = 1.0
                                added[g, k - 1] = True
                        changed = True
                    t = end
                else:
                    t += 1
            # fill off-gaps shorter than the minimum down time
            t = 1
            while t <= T:
                if row[t] < 0.5 and row[t - 1] > 0.5:
                    end = t
                    while end <= T and row[end] < 0.5:
                        end += 1
                    if end <= T and end - t < sg.TD:
                        for k in range(t, end):
                            row[k] = 1.0
                            added[g, k - 1] = True
                        changed = True
                    t = end
                else:
                    t += 1
            u[g] = row[1:]


def rmr_dispatch(problem: Problem, overlay: RmrOverlay) -> tuple[DecisionSchedule, DualRecord]:
    """Re-dispatch with the overlay commitment; out-of-market unit-hours run at Pmin with no reserve share."""
    P, al = problem.var["P"], problem.var["alpha"]
    extra = {}
    for g, t in zip(*np.nonzero(overlay.added)):
        sg = problem.case.sgs[g]
        extra[int(P[g, t])] = (sg.Pmin, ("fix_P", int(g), int(t)))
        extra[int(al[g, t])] = (0.0, ("fix_alpha", int(g), int(t)))
    return solve_fixed_qp(problem, overlay.u, extra_fix=extra)


def rmr_schedule(problem: Problem, base_schedule: DecisionSchedule) -> tuple[RmrOverlay, DecisionSchedule, DualRecord]:
    """Select and re-dispatch; storage is first credited at full capability, then at its base level."""
    try:
        overlay = rmr_select(problem.case, base_schedule, problem.margins, storage_credit="max")
        return (overlay, *rmr_dispatch(problem, overlay))
    except (RmrError, InfeasibleError):
        overlay = rmr_select(problem.case, base_schedule, problem.margins, storage_credit="schedule")
        return (overlay, *rmr_dispatch(problem, overlay))


# --------------------------------------------------------------------------- comparison


@dataclass
class ComparisonTable:
    schemes: list[str]
    rows: dict[str, dict[str, float]]

    def metric(self, name: str) -> dict[str, float]:
        return {s: self.rows[s][name] for s in self.schemes}

    def deltas(self, reference: str | None = None) -> dict[str, dict[str, float]]:
        ref = self.rows[reference or self.schemes[0]]
        return {s: {k: v - ref[k] for k, v in self.rows[s].items()} for s in self.schemes}

    def ordered(self, metric: str, order: list[str], tol: float = 1e-6) -> bool:
        """True when ``metric`` is weakly increasing along ``order``."""
        vals = [self.rows[s][metric] for s in order]
        return all(a <= b + tol * max(1.0, abs(b)) for a, b in zip(vals, vals[1:]))

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        keys = sorted({k for r in self.rows.values() for k in r})
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["scheme", *keys])
            for s in self.schemes:
                wr.writerow([s, *[repr(float(self.rows[s].get(k, 0.0))) for k in keys]])
        return path


def compare_schemes(reports: list[SettlementReport]) -> ComparisonTable:
    if len(reports) < 2:
        raise ValueError("need at least two reports to compare")
    names = [r.scheme for r in reports]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate schemes in comparison: {names}")
    key = (reports[0].case_name, reports[0].eta)
    for r in reports[1:]:
        if (r.case_name, r.eta) != key:
            raise ValueError(f"mismatched scenarios: {key} vs {(r.case_name, r.eta)}")
    rows = {}
    for r in reports:
        prof = r.profit_by_kind()
        rows[r.scheme] = {
            "total_uplift": r.total_uplift,
            "consumer_payment": r.consumer_payment,
            "profit_SG": prof.get("SG", 0.0),
            "profit_ES": prof.get("ES", 0.0),
            "profit_RES": prof.get("RES", 0.0),
        }
    return ComparisonTable([r.scheme for r in reports], rows)
