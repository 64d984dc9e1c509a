"""Gaussian forecast-error aggregation, chance-constraint margins and the expected SG cost."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .case import SgUnit, SystemCase

# Acklam's rational approximation of the standard-normal quantile.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00, 3.754408661907416e00)
_P_LOW = 0.02425


def norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def norm_ppf(p: float) -> float:
    """Standard-normal quantile, rational approximation plus one Newton step on the CDF."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must be in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
            ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log1p(-p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    # Newton refinement; upper tail is refined through the complement to avoid cancellation.
    pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    if p > 0.5:
        err = 0.5 * math.erfc(x / math.sqrt(2.0)) - (1.0 - p)
        return x + err / pdf
    return x - (norm_cdf(x) - p) / pdf


def chance_margin(eps: float, sigma: float, mean: float) -> float:
    """Margin ``Phi^-1(1 - eps) * sigma - mean`` turning a Gaussian chance constraint deterministic."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must be in (0, 1), got {eps}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return norm_ppf(1.0 - eps) * sigma - mean


@dataclass(frozen=True)
class AggregateError:
    Mrt: np.ndarray
    Srt: np.ndarray
    Mht: np.ndarray
    Sht: np.ndarray


def aggregate_errors(case: SystemCase) -> AggregateError:
    """Hourly mean/std of the summed RES power and inertia errors (independent Gaussians).

    ``params.error_mean`` / ``params.error_std``, when present, replace the power
    aggregate (the inertia aggregate is always summed from the units).
    """
    T = case.T
    Mrt = np.zeros(T)
    var_r = np.zeros(T)
    Mht = np.zeros(T)
    var_h = np.zeros(T)
    for r in case.ress:
        Mrt += np.asarray(r.err_mean)
        var_r += np.asarray(r.err_std) ** 2
        Mht += np.asarray(r.inertia_err_mean)
        var_h += np.asarray(r.inertia_err_std) ** 2
    if case.params.error_mean is not None:
        Mrt = np.full(T, case.params.error_mean)
    if case.params.error_std is not None:
        var_r = np.full(T, case.params.error_std**2)
    return AggregateError(Mrt=Mrt, Srt=np.sqrt(var_r), Mht=Mht, Sht=np.sqrt(var_h))


MARGIN_CONVENTIONS = ("exact", "literal")


@dataclass(frozen=True)
class ChanceMargins:
    """Deterministic margins, one row per unit and one column per hour.

    ``g_up``/``g_dn`` multiply alpha in the SG upper/lower capacity rows, ``d``/``c``
    in the ES discharge/charge rows. ``h`` is added to each RES inertia forecast
    inside the system inertia row, i.e. the row counts ``(H + h) * Pmax``.
    """

    g_up: np.ndarray
    g_dn: np.ndarray
    d: np.ndarray
    c: np.ndarray
    h: np.ndarray
    convention: str = "exact"


def compute_margins(case: SystemCase, agg: AggregateError | None = None, convention: str = "exact") -> ChanceMargins:
    """Margins for every unit class.

    ``convention="literal"`` uses ``Phi^-1(1-eps) S - M`` for every row and adds the
    inertia margin to the RES forecast. ``"exact"`` keeps that form for the SG lower
    row but uses ``Phi^-1(1-eps) S + M`` where a positive error mean pushes a unit
    toward its upper limit, and subtracts ``Phi^-1(1-eps) S_h + M_h`` from RES inertia,
    so every deterministic row implies its chance constraint.
    """
    if convention not in MARGIN_CONVENTIONS:
        raise ValueError(f"unknown margin convention {convention!r}")
    agg = agg or aggregate_errors(case)
    T = case.T
    literal = convention == "literal"
    upper_mean = agg.Mrt if literal else -agg.Mrt

    def rows(eps_values, sigma, mean):
        out = np.zeros((len(eps_values), T))
        for k, eps in enumerate(eps_values):
            out[k] = [chance_margin(eps, sigma[t], mean[t]) for t in range(T)]
        return out

    g_dn = rows([g.eps for g in case.sgs], agg.Srt, agg.Mrt)
    g_up = rows([g.eps for g in case.sgs], agg.Srt, upper_mean)
    d = rows([e.eps_d for e in case.ess], agg.Srt, upper_mean)
    c = rows([e.eps_c for e in case.ess], agg.Srt, upper_mean)
    if literal:
        h = rows([r.eps_h for r in case.ress], agg.Sht, agg.Mht)
    else:
        h = -rows([r.eps_h for r in case.ress], agg.Sht, -agg.Mht)
    return ChanceMargins(g_up=g_up, g_dn=g_dn, d=d, c=c, h=h, convention=convention)


def zero_margins(case: SystemCase) -> ChanceMargins:
    T = case.T
    return ChanceMargins(
        g_up=np.zeros((len(case.sgs), T)), g_dn=np.zeros((len(case.sgs), T)),
        d=np.zeros((len(case.ess), T)), c=np.zeros((len(case.ess), T)),
        h=np.zeros((len(case.ress), T)), convention="zero",
    )


def expected_sg_cost(unit: SgUnit, P: float, alpha: float, u: int, v: int, M: float, S: float) -> float:
    """E[a X^2 + b X] + u c + v s for X = P + alpha * Omega, Omega ~ N(M, S^2)."""
    mean = P + M * alpha
    return unit.a * (mean**2 + S**2 * alpha**2) + unit.b * mean + u * unit.c + v * unit.s
