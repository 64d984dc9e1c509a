"""Aggregate single-machine frequency response after a generation outage."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .case import SystemCase
from .model import system_inertia
from .solver import DecisionSchedule
from .uncertainty import ChanceMargins, compute_margins


@dataclass(frozen=True)
class SfrParams:
    """Swing equation with a reheat-turbine governor; all gains in per unit of the pre-fault load."""

    D: float = 1.0
    R: float = 0.05
    Fh: float = 0.3
    Tr: float = 8.0
    Km: float = 0.95
    dt: float = 1e-3
    horizon: float = 30.0

    def __post_init__(self):
        if self.Tr <= 0:
            raise ValueError("Tr must be positive")
        if not 0 < self.dt <= 0.01:
            raise ValueError("dt must lie in (0, 0.01] s")
        if self.horizon < 30.0:
            raise ValueError("horizon must be at least 30 s")
        if self.R <= 0:
            raise ValueError("R must be positive")


@dataclass
class FrequencyTrajectory:
    t: np.ndarray
    df: np.ndarray  # Hz deviation from nominal
    f0: float
    rocof_initial: float
    nadir: float  # absolute frequency, Hz
    nadir_time: float

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "df"])
            for a, b in zip(self.t, self.df):
                wr.writerow([repr(float(a)), repr(float(b))])
        return path


def kinetic_energy(case: SystemCase, schedule: DecisionSchedule, hour: int,
                   margins: ChanceMargins | None = None) -> float:
    """Stored and emulated kinetic energy counted by the system inertia row (MW s)."""
    margins = margins if margins is not None else compute_margins(case)
    return system_inertia(case, margins, schedule.u, schedule.He, hour)


def rocof_closed_form(E: float, dP: float, f0: float) -> float:
    return -dP * f0 / (2.0 * E)


def simulate_outage(E: float, Psys_load: float, dP: float, params: SfrParams | None = None,
                    f0: float = 60.0) -> FrequencyTrajectory:
    """Integrate the frequency deviation after losing ``dP`` MW with fixed-step RK4.

    State is (frequency deviation in pu, governor lag state). The equivalent inertia
    constant is ``E / Psys_load``.
    """
    params = params or SfrParams()
    if E <= 0:
        raise ValueError("kinetic energy must be positive")
    if Psys_load <= 0:
        raise ValueError("load must be positive")
    if dP < 0 or dP >= Psys_load:
        raise ValueError("outage must satisfy 0 <= dP < load")
    H = E / Psys_load
    dPL = dP / Psys_load
    kg = params.Km / params.R
    n = int(round(params.horizon / params.dt))
    dt = params.dt

    def rhs(x):
        w, g = x
        gov_in = -kg * w
        pm = params.Fh * gov_in + (1.0 - params.Fh) * g
        return np.array([(pm - dPL - params.D * w) / (2.0 * H), (gov_in - g) / params.Tr])

    x = np.zeros(2)
    w_hist = np.empty(n + 1)
    w_hist[0] = 0.0
    for k in range(n):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * dt * k1)
        k3 = rhs(x + 0.5 * dt * k2)
        k4 = rhs(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        w_hist[k + 1] = x[0]
    t = np.arange(n + 1) * dt
    df = w_hist * f0
    i = int(np.argmin(df))
    return FrequencyTrajectory(t=t, df=df, f0=f0, rocof_initial=float((df[1] - df[0]) / dt),
                               nadir=float(f0 + df[i]), nadir_time=float(t[i]))


@dataclass
class FrequencyMetric:
    scenario: str
    hour: int
    E: float
    rocof: float
    nadir: float


METRIC_COLUMNS = ("scenario", "hour", "E", "rocof", "nadir")


def scenario_frequency_metrics(case: SystemCase, schedules: dict[str, DecisionSchedule], hours: list[int],
                               dP: float, params: SfrParams | None = None,
                               margins: ChanceMargins | None = None) -> list[FrequencyMetric]:
    """Outage response at each requested hour for every scenario's schedule.

    The load base of each hour is that hour's total demand.
    """
    margins = margins if margins is not None else compute_margins(case)
    load = case.total_load()
    out = []
    for name in sorted(schedules):
        sched = schedules[name]
        for h in hours:
            E = kinetic_energy(case, sched, h, margins)
            traj = simulate_outage(E, load[h], dP, params, case.params.f0)
            out.append(FrequencyMetric(name, h, E, traj.rocof_initial, traj.nadir))
    return out


def rocof_regressions(metrics: list[FrequencyMetric], base: str = "base", tol: float = 1e-9) -> list[tuple]:
    """(scenario, hour) pairs whose |RoCoF| exceeds the base scenario's at the same hour."""
    ref = {m.hour: m for m in metrics if m.scenario == base}
    bad = []
    for m in metrics:
        if m.scenario != base and m.hour in ref and abs(m.rocof) > abs(ref[m.hour].rocof) + tol:
            bad.append((m.scenario, m.hour))
    return bad


def write_metrics(metrics: list[FrequencyMetric], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(METRIC_COLUMNS)
        for m in metrics:
            wr.writerow([m.scenario, m.hour, repr(float(m.E)), repr(float(m.rocof)), repr(float(m.nadir))])
    return path
