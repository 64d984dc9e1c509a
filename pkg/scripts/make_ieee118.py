"""Build the synthetic 118-bus case used for full-scale runs.

Topology and reactances come from the pypower copy of the IEEE 118-bus system
(install with ``pip install pypower``; it is not a runtime dependency). Unit data,
load profiles and renewable profiles are synthetic and deterministic: the system
is scaled so the largest unit is 1500 MW and the inertia requirement is
Psys * Hmin = 12651.43 MW * 3.5 s = 44.28 GW s.

    python scripts/make_ieee118.py [output.json]
"""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
from pypower.case118 import case118

from inertia_uc.case import (EsUnit, Line, Network, ResUnit, SgUnit, SystemCase, SystemParams, dump_case,
                             validate_case)

T = 24
PSYS = 12651.43
HMIN = 3.5
N_SG, N_PV, N_WT, N_ES = 28, 8, 2, 10
PEAK_LOAD = 11_000.0
LARGEST_SG = 1500.0
SEED = 118

# normalized daily demand, off-peak trough overnight, evening peak
LOAD_SHAPE = np.array([0.64, 0.61, 0.59, 0.58, 0.59, 0.62, 0.68, 0.76, 0.84, 0.89, 0.92, 0.94,
                       0.95, 0.95, 0.94, 0.93, 0.93, 0.95, 0.99, 1.00, 0.97, 0.89, 0.79, 0.70])
PV_SHAPE = np.clip(np.sin(np.pi * (np.arange(T) - 6) / 13), 0.0, None)
WT_SHAPE = 0.55 + 0.25 * np.cos(2 * np.pi * (np.arange(T) - 3) / T)

# (share of units, H range s, TU/TD h, start-up $/MW, no-load $/MW h, marginal $/MWh)
CLASSES = {
    "base": (0.25, (3.0, 5.0), 8, 120.0, 4.0, (12.0, 18.0)),
    "mid": (0.40, (5.0, 8.0), 4, 60.0, 6.0, (20.0, 30.0)),
    "peak": (0.35, (6.0, 10.0), 1, 25.0, 9.0, (35.0, 55.0)),
}


def _network(ppc) -> Network:
    merged: dict[tuple[int, int], list[float]] = {}
    for row in ppc["branch"]:
        i, j = sorted((int(row[0]), int(row[1])))
        B = 1.0 / float(row[3])
        acc = merged.setdefault((i, j), [0.0, 0.0])
        acc[0] += B
        # line ratings in the source are placeholders; lines are sized to be non-binding
        acc[1] += 5000.0
    lines = tuple(Line(i, j, B=round(v[0], 6), Fmax=v[1]) for (i, j), v in sorted(merged.items()))
    buses = tuple(int(b) for b in ppc["bus"][:, 0])
    slack = int(ppc["bus"][ppc["bus"][:, 1] == 3][0, 0])
    return Network(buses=buses, lines=lines, slack_bus=slack)


def _sgs(ppc, rng) -> tuple[SgUnit, ...]:
    gen = ppc["gen"]
    order = np.lexsort((gen[:, 0], -gen[:, 8]))[:N_SG]
    pmax_src = gen[order, 8]
    scale = LARGEST_SG / pmax_src.max()
    n_base = int(round(CLASSES["base"][0] * N_SG))
    n_mid = int(round(CLASSES["mid"][0] * N_SG))
    units = []
    for k, idx in enumerate(order):
        kind = "base" if k < n_base else "mid" if k < n_base + n_mid else "peak"
        _, (h_lo, h_hi), tmin, su, nl, (b_lo, b_hi) = CLASSES[kind]
        Pmax = round(max(float(pmax_src[k]) * scale, 150.0), 1)
        Pmin = round((0.45 if kind == "base" else 0.3 if kind == "mid" else 0.2) * Pmax, 1)
        b = round(float(rng.uniform(b_lo, b_hi)), 3)
        a = round(float(rng.uniform(0.5, 1.5)) * b / (40.0 * Pmax), 6)
        u0 = int(kind == "base")
        units.append(SgUnit(
            id=f"G{k + 1}", bus=int(gen[idx, 0]), a=a, b=b, c=round(nl * Pmax, 1), s=round(su * Pmax, 1),
            Pmin=Pmin, Pmax=Pmax, RU=round(0.6 * Pmax, 1), RD=round(0.6 * Pmax, 1), TU=tmin, TD=tmin,
            H=round(float(rng.uniform(h_lo, h_hi)), 2), eps=0.05, u0=u0,
            p0=round(0.7 * Pmax, 1) if u0 else 0.0,
        ))
    return tuple(units)


def _ress(buses, rng) -> tuple[ResUnit, ...]:
    out = []
    sites = rng.choice(np.array(buses), size=N_PV + N_WT, replace=False)
    for k in range(N_PV + N_WT):
        pv = k < N_PV
        cap = 900.0 if pv else 1400.0
        shape = PV_SHAPE if pv else WT_SHAPE
        fc = tuple(round(0.3 * cap * float(x), 3) for x in shape)
        H = 0.0 if pv else 2.0
        out.append(ResUnit(
            id=f"PV{k + 1}" if pv else f"WT{k - N_PV + 1}", bus=int(sites[k]), kind="PV" if pv else "WT",
            Pmax=cap, forecast=fc, err_mean=tuple(0.0 for _ in fc), err_std=tuple(round(0.05 * f, 4) for f in fc),
            inertia_forecast=(H,) * T, inertia_err_mean=(0.0,) * T, inertia_err_std=((0.0 if pv else 0.2),) * T,
            eps_h=0.05, mppt=fc,
        ))
    return tuple(out)


def _ess(buses, rng) -> tuple[EsUnit, ...]:
    sites = rng.choice(np.array(buses), size=N_ES, replace=False)
    return tuple(EsUnit(id=f"E{k + 1}", bus=int(sites[k]), Pe_max=100.0, Pc_max=100.0, Emin=40.0, Emax=400.0,
                        k=0.95, He_max=5.0, e0=200.0, eps_d=0.05, eps_c=0.05) for k in range(N_ES))


def build() -> SystemCase:
    ppc = case118()
    rng = np.random.default_rng(SEED)
    network = _network(ppc)
    pd = ppc["bus"][:, 2]
    share = pd / pd.sum()
    load = {int(b): tuple(round(PEAK_LOAD * float(s) * float(x), 3) for x in LOAD_SHAPE)
            for b, s in zip(ppc["bus"][:, 0], share) if s > 0}
    params = SystemParams(f0=60.0, fmax_prime=0.5, dfmax=0.55, Hmin=HMIN, Psys=PSYS, T=T, base_mva=100.0,
                          error_mean=0.5, error_std=1.0)
    case = SystemCase(params=params, network=network, sgs=_sgs(ppc, rng), ess=_ess(network.buses, rng),
                      ress=_ress(network.buses, rng), load=load, name="ieee118-mod")
    validate_case(case)
    return case


def main(argv: list[str]) -> int:
    out = Path(argv[1]) if len(argv) > 1 else Path(__file__).resolve().parents[1] / "src/inertia_uc/data/ieee118_mod.json"
    case = build()
    dump_case(case, out)
    print(f"wrote {out}: {len(case.sgs)} SG, {len(case.ress)} RES, {len(case.ess)} ES, "
          f"requirement {case.inertia_requirement():.1f} MW s")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
