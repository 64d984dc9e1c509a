"""Small hand-built and randomized systems that exercise specific pricing and commitment situations."""
from __future__ import annotations

import numpy as np

from .case import EsUnit, Line, Network, ResUnit, SgUnit, SystemCase, SystemParams, validate_case


def _params(T: int, Psys: float, Hmin: float, **kw) -> SystemParams:
    base = dict(f0=60.0, fmax_prime=0.5, dfmax=0.8, Hmin=Hmin, Psys=Psys, T=T, base_mva=100.0)
    base.update(kw)
    return SystemParams(**base)


def _sg(uid, bus, a, b, c, s, Pmin, Pmax, H, u0=0, p0=0.0, RU=None, RD=None, TU=1, TD=1, eps=0.05) -> SgUnit:
    return SgUnit(id=uid, bus=bus, a=a, b=b, c=c, s=s, Pmin=Pmin, Pmax=Pmax, RU=RU if RU is not None else Pmax,
                  RD=RD if RD is not None else Pmax, TU=TU, TD=TD, H=H, eps=eps, u0=u0, p0=p0)


def _pv(uid, bus, forecast, Pmax, std_frac=0.05, H=0.0, h_std=0.0, mppt=None, eps_h=0.05) -> ResUnit:
    T = len(forecast)
    return ResUnit(
        id=uid, bus=bus, kind="PV", Pmax=Pmax, forecast=tuple(forecast),
        err_mean=tuple(0.0 for _ in forecast), err_std=tuple(std_frac * f for f in forecast),
        inertia_forecast=(H,) * T, inertia_err_mean=(0.0,) * T, inertia_err_std=(h_std,) * T,
        eps_h=eps_h, mppt=tuple(mppt) if mppt is not None else tuple(forecast),
    )


def _single_bus(bus: int = 1) -> Network:
    return Network(buses=(bus,), lines=(), slack_bus=bus)


def _finish(case: SystemCase) -> SystemCase:
    validate_case(case)
    return case


def trivial_case() -> SystemCase:
    """One unit that is already online, one bus, flat load."""
    return _finish(SystemCase(
        params=_params(2, Psys=100.0, Hmin=1.0),
        network=_single_bus(),
        sgs=(_sg("G1", 1, a=0.01, b=10.0, c=5.0, s=0.0, Pmin=10.0, Pmax=100.0, H=4.0, u0=1, p0=50.0),),
        ess=(), ress=(), load={1: (50.0, 60.0)}, name="trivial"))


def peaker_case() -> SystemCase:
    """A cheap base unit too small for the inertia requirement plus an expensive high-inertia peaker.

    Without the inertia row the peaker is needed only in the peak hour, so the
    inertia-blind schedule is short in the other hours.
    """
    T = 4
    return _finish(SystemCase(
        params=_params(T, Psys=500.0, Hmin=2.0, error_mean=0.5, error_std=1.0),
        network=_single_bus(),
        sgs=(
            _sg("G1", 1, a=0.01, b=20.0, c=100.0, s=0.0, Pmin=50.0, Pmax=300.0, H=2.0, u0=1, p0=240.0),
            _sg("G2", 1, a=0.02, b=40.0, c=300.0, s=600.0, Pmin=20.0, Pmax=100.0, H=6.0),
        ),
        ess=(),
        ress=(_pv("PV1", 1, (20.0, 30.0, 30.0, 20.0), Pmax=60.0, H=0.5, h_std=0.05),),
        load={1: (260.0, 300.0, 330.0, 290.0)}, name="peaker"))


def mingen_case() -> SystemCase:
    """The base unit hits capacity in two hours, so a unit with a large minimum output runs at Pmin.

    The inertia requirement is loose; prices are driven by the minimum-output bound.
    """
    T = 4
    return _finish(SystemCase(
        params=_params(T, Psys=100.0, Hmin=1.0, error_mean=0.5, error_std=1.0),
        network=_single_bus(),
        sgs=(
            _sg("G1", 1, a=0.01, b=20.0, c=100.0, s=0.0, Pmin=50.0, Pmax=300.0, H=4.0, u0=1, p0=240.0),
            _sg("G2", 1, a=0.01, b=35.0, c=200.0, s=400.0, Pmin=40.0, Pmax=120.0, H=4.0),
        ),
        ess=(),
        ress=(_pv("PV1", 1, (10.0, 20.0, 20.0, 10.0), Pmax=40.0),),
        load={1: (250.0, 320.0, 330.0, 270.0)}, name="mingen"))


def storage_inertia_case() -> SystemCase:
    """Storage supplies the last slice of the inertia requirement at the expense of discharge headroom."""
    T = 3
    return _finish(SystemCase(
        params=_params(T, Psys=400.0, Hmin=2.5, error_mean=0.5, error_std=1.0),
        network=_single_bus(),
        sgs=(_sg("G1", 1, a=0.02, b=20.0, c=50.0, s=0.0, Pmin=20.0, Pmax=400.0, H=2.0, u0=1, p0=250.0),),
        ess=(EsUnit(id="E1", bus=1, Pe_max=100.0, Pc_max=100.0, Emin=0.0, Emax=1000.0, k=0.95, He_max=5.0,
                    e0=900.0, eps_d=0.05, eps_c=0.05),),
        ress=(),
        load={1: (280.0, 320.0, 300.0)}, name="storage-inertia"))


def congested_case() -> SystemCase:
    """Cheap generation at bus 1, expensive generation and all load at bus 2, a binding tie line."""
    T = 2
    return _finish(SystemCase(
        params=_params(T, Psys=100.0, Hmin=1.0, error_mean=0.5, error_std=1.0),
        network=Network(buses=(1, 2), lines=(Line(1, 2, B=10.0, Fmax=100.0),), slack_bus=1),
        sgs=(
            _sg("G1", 1, a=0.01, b=15.0, c=20.0, s=0.0, Pmin=0.0, Pmax=300.0, H=3.0, u0=1, p0=100.0),
            _sg("G2", 2, a=0.02, b=30.0, c=20.0, s=0.0, Pmin=0.0, Pmax=300.0, H=3.0, u0=1, p0=100.0),
        ),
        ess=(), ress=(),
        load={2: (180.0, 200.0)}, name="congested"))


def curated_suite() -> dict[str, SystemCase]:
    return {c.name: c for c in (trivial_case(), peaker_case(), mingen_case(), storage_inertia_case(),
                                congested_case())}


def random_desk_case(seed: int, n_sg: int | None = None, n_bus: int | None = None, T: int | None = None,
                     with_es: bool | None = None, max_binaries: int = 12) -> SystemCase:
    """A random small system that is feasible with every unit online.

    Sizes default to random draws with at most ``max_binaries`` commitment columns.
    """
    rng = np.random.default_rng(seed)
    while True:
        ng = n_sg or int(rng.integers(1, 4))
        hours = T or int(rng.integers(2, 5))
        if ng * hours <= max_binaries:
            break
    nb = n_bus or int(rng.integers(1, 4))
    es_on = bool(rng.random() < 0.4) if with_es is None else with_es
    buses = tuple(range(1, nb + 1))
    lines = tuple(Line(k, k + 1, B=float(rng.uniform(5, 20)), Fmax=float(rng.uniform(150, 400)))
                  for k in range(1, nb))
    sgs = []
    for g in range(ng):
        Pmax = float(rng.uniform(80, 250))
        Pmin = float(rng.uniform(0.1, 0.4) * Pmax)
        u0 = int(rng.random() < 0.5)
        sgs.append(_sg(
            f"G{g + 1}", int(rng.choice(buses)), a=float(rng.uniform(0.002, 0.03)), b=float(rng.uniform(10, 40)),
            c=float(rng.uniform(0, 200)), s=float(rng.uniform(0, 500)), Pmin=round(Pmin, 3), Pmax=round(Pmax, 3),
            H=float(rng.uniform(1, 8)), u0=u0, p0=round(float(rng.uniform(Pmin, Pmax)), 3) if u0 else 0.0,
            RU=Pmax, RD=Pmax, TU=int(rng.integers(1, 3)), TD=int(rng.integers(1, 3)),
        ))
    cap = sum(sg.Pmax for sg in sgs)
    pv_cap = float(rng.uniform(10, 40))
    fc = [float(pv_cap * rng.uniform(0.2, 0.9)) for _ in range(hours)]
    ress = (_pv("PV1", int(rng.choice(buses)), fc, Pmax=pv_cap, std_frac=float(rng.uniform(0.02, 0.1)),
                H=float(rng.uniform(0, 1)), h_std=float(rng.uniform(0, 0.1))),)
    ess = ()
    if es_on:
        ess = (EsUnit(id="E1", bus=int(rng.choice(buses)), Pe_max=30.0, Pc_max=30.0, Emin=5.0, Emax=100.0, k=0.9,
                      He_max=3.0, e0=50.0, eps_d=0.05, eps_c=0.05),)
    total = [float(rng.uniform(0.25, 0.65) * cap) + fc[t] for t in range(hours)]
    # keep the largest minimum output plus a recourse margin coverable by net load
    floor = max(sg.Pmin for sg in sgs) + 4.0 * max(ress[0].err_std) + 5.0
    total = [max(total[t], floor + fc[t]) for t in range(hours)]
    load: dict[int, tuple] = {}
    shares = rng.dirichlet(np.ones(nb))
    for k, bus in enumerate(buses):
        load[bus] = tuple(round(total[t] * shares[k], 3) for t in range(hours))
    firm = sum(sg.H * sg.Pmax for sg in sgs)
    req = float(rng.uniform(0.3, 0.8) * firm)
    params = _params(hours, Psys=round(req / 2.0, 3), Hmin=2.0)
    return _finish(SystemCase(params=params, network=Network(buses, lines, 1), sgs=tuple(sgs), ess=ess, ress=ress,
                              load=load, name=f"desk-{seed}"))
