"""Monte-Carlo audit of the chance constraints behind a deterministic schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .case import SystemCase
from .solver import DecisionSchedule
from .uncertainty import AggregateError, ChanceMargins, aggregate_errors


@dataclass
class FamilyRate:
    family: str
    target: float
    threshold: float
    min_rate: float
    rows: int
    worst: tuple | None
    flagged: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.flagged


def _binomial_threshold(eps: float, N: int) -> float:
    p = 1.0 - eps
    return p - 3.0 * np.sqrt(p * (1.0 - p) / N)


def monte_carlo_chance_check(case: SystemCase, schedule: DecisionSchedule, margins: ChanceMargins | None = None,
                             N: int = 100_000, seed: int = 0, agg: AggregateError | None = None,
                             families=("sg_upper", "sg_lower", "es_discharge", "es_charge", "inertia")
                             ) -> dict[str, FamilyRate]:
    """Empirical satisfaction rate of every chance-constraint row under sampled forecast errors.

    Power errors are drawn from the hourly aggregate N(M, S^2); each unit's output is
    ``P + alpha * Omega``. RES inertia errors are drawn per unit. A row is flagged
    when its rate falls below ``1 - eps - 3 * binomial std``. ``margins`` is not used
    for sampling; it only rides along for callers that report it.
    """
    if N < 10_000:
        raise ValueError("N must be at least 1e4")
    agg = agg or aggregate_errors(case)
    rng = np.random.default_rng(seed)
    T = case.T
    prm = case.params
    omega = np.stack([rng.normal(agg.Mrt[t], agg.Srt[t], N) for t in range(T)])
    out: dict[str, FamilyRate] = {}

    def record(family, eps, key, ok_mask):
        rate = float(np.mean(ok_mask))
        thr = _binomial_threshold(eps, N)
        fr = out.setdefault(family, FamilyRate(family, 1 - eps, thr, 1.0, 0, None))
        fr.rows += 1
        if rate < fr.min_rate:
            fr.min_rate, fr.worst = rate, key
        fr.target = min(fr.target, 1 - eps)
        fr.threshold = min(fr.threshold, thr)
        if rate < thr:
            fr.flagged.append((key, rate, thr))

    for g, sg in enumerate(case.sgs):
        tol = 1e-6 * max(1.0, sg.Pmax)
        for t in range(T):
            out_p = schedule.P[g, t] + schedule.alpha[g, t] * omega[t]
            u = schedule.u[g, t]
            if "sg_upper" in families:
                record("sg_upper", sg.eps, (sg.id, t), out_p <= u * sg.Pmax + tol)
            if "sg_lower" in families:
                record("sg_lower", sg.eps, (sg.id, t), out_p >= u * sg.Pmin - tol)

    rocof_k = 2.0 * prm.fmax_prime / prm.f0
    for e, es in enumerate(case.ess):
        tol = 1e-6 * max(1.0, es.Pe_max)
        for t in range(T):
            held = rocof_k * schedule.He[e, t] * es.Pe_max
            if "es_discharge" in families:
                dis = schedule.Pd[e, t] + schedule.ad[e, t] * omega[t] + held
                record("es_discharge", es.eps_d, (es.id, t), dis <= es.Pe_max + tol)
            if "es_charge" in families:
                chg = schedule.Pc[e, t] + schedule.ac[e, t] * omega[t] + held
                record("es_charge", es.eps_c, (es.id, t), chg <= es.Pc_max + tol)

    if "inertia" in families:
        req = case.inertia_requirement()
        eps_h = min((r.eps_h for r in case.ress), default=0.05)
        for t in range(T):
            firm = sum(schedule.u[g, t] * sg.H * sg.Pmax for g, sg in enumerate(case.sgs))
            firm += sum(schedule.He[e, t] * es.Pe_max for e, es in enumerate(case.ess))
            total = np.full(N, firm)
            for r in case.ress:
                w = rng.normal(r.inertia_err_mean[t], r.inertia_err_std[t], N)
                total += (r.inertia_forecast[t] - w) * r.Pmax
            record("inertia", eps_h, ("system", t), total >= req - 1e-6 * max(1.0, req))
    return out
