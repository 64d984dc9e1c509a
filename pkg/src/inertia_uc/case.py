"""Test-system data: typed case records, JSON ingestion/validation, RES penetration scaling."""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

SCHEMA_VERSION = 1


class CaseParseError(ValueError):
    """The case file is not valid JSON or does not follow the schema layout."""


class CaseValidationError(ValueError):
    """A field violates a case invariant. ``path`` points at the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class SystemParams:
    f0: float
    fmax_prime: float
    dfmax: float
    Hmin: float
    Psys: float
    T: int
    base_mva: float = 100.0
    # System-wide generation error (mean, std) replacing the per-unit aggregate when set.
    error_mean: float | None = None
    error_std: float | None = None


@dataclass(frozen=True)
class Line:
    i: int
    j: int
    B: float
    Fmax: float


@dataclass(frozen=True)
class Network:
    buses: tuple[int, ...]
    lines: tuple[Line, ...]
    slack_bus: int


@dataclass(frozen=True)
class SgUnit:
    id: str
    bus: int
    a: float
    b: float
    c: float
    s: float
    Pmin: float
    Pmax: float
    RU: float
    RD: float
    TU: int
    TD: int
    H: float
    eps: float
    u0: int = 0
    p0: float = 0.0

    def cost_at_pmin_per_mw(self) -> float:
        if self.Pmin <= 0:
            return math.inf
        return (self.a * self.Pmin**2 + self.b * self.Pmin + self.c) / self.Pmin


@dataclass(frozen=True)
class EsUnit:
    id: str
    bus: int
    Pe_max: float
    Pc_max: float
    Emin: float
    Emax: float
    k: float
    He_max: float
    e0: float
    eps_d: float
    eps_c: float


@dataclass(frozen=True)
class ResUnit:
    id: str
    bus: int
    kind: str
    Pmax: float
    forecast: tuple[float, ...]
    err_mean: tuple[float, ...]
    err_std: tuple[float, ...]
    inertia_forecast: tuple[float, ...]
    inertia_err_mean: tuple[float, ...]
    inertia_err_std: tuple[float, ...]
    eps_h: float
    mppt: tuple[float, ...]


@dataclass(frozen=True)
class SystemCase:
    params: SystemParams
    network: Network
    sgs: tuple[SgUnit, ...]
    ess: tuple[EsUnit, ...]
    ress: tuple[ResUnit, ...]
    load: dict[int, tuple[float, ...]] = field(default_factory=dict)
    name: str = ""

    @property
    def T(self) -> int:
        return self.params.T

    def total_load(self) -> list[float]:
        return [sum(series[t] for series in self.load.values()) for t in range(self.T)]

    def bus_load(self, bus: int, t: int) -> float:
        series = self.load.get(bus)
        return series[t] if series is not None else 0.0

    def inertia_requirement(self) -> float:
        return self.params.Psys * self.params.Hmin


# --------------------------------------------------------------------------- parsing


def _get(d: dict, key: str, path: str):
    if not isinstance(d, dict):
        raise CaseParseError(f"{path}: expected an object")
    if key not in d:
        raise CaseParseError(f"{path}.{key}: missing")
    return d[key]


def _num(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseParseError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise CaseParseError(f"{path}: expected an integer, got {value!r}")
    return value


def _series(value, path: str) -> tuple[float, ...]:
    if not isinstance(value, list):
        raise CaseParseError(f"{path}: expected an array")
    return tuple(_num(v, f"{path}[{k}]") for k, v in enumerate(value))


def _parse_params(d: dict) -> SystemParams:
    p = "params"
    return SystemParams(
        f0=_num(_get(d, "f0", p), f"{p}.f0"),
        fmax_prime=_num(_get(d, "fmax_prime", p), f"{p}.fmax_prime"),
        dfmax=_num(_get(d, "dfmax", p), f"{p}.dfmax"),
        Hmin=_num(_get(d, "Hmin", p), f"{p}.Hmin"),
        Psys=_num(_get(d, "Psys", p), f"{p}.Psys"),
        T=_int(_get(d, "T", p), f"{p}.T"),
        base_mva=_num(d.get("base_mva", 100.0), f"{p}.base_mva"),
        error_mean=None if d.get("error_mean") is None else _num(d["error_mean"], f"{p}.error_mean"),
        error_std=None if d.get("error_std") is None else _num(d["error_std"], f"{p}.error_std"),
    )


def _parse_network(d: dict) -> Network:
    p = "network"
    buses = tuple(_int(b, f"{p}.buses[{k}]") for k, b in enumerate(_get(d, "buses", p)))
    lines = []
    for k, ln in enumerate(_get(d, "lines", p)):
        lp = f"{p}.lines[{k}]"
        lines.append(
            Line(
                i=_int(_get(ln, "from", lp), f"{lp}.from"),
                j=_int(_get(ln, "to", lp), f"{lp}.to"),
                B=_num(_get(ln, "B", lp), f"{lp}.B"),
                Fmax=_num(_get(ln, "Fmax", lp), f"{lp}.Fmax"),
            )
        )
    return Network(buses=buses, lines=tuple(lines), slack_bus=_int(_get(d, "slack_bus", p), f"{p}.slack_bus"))


_SG_FLOATS = ("a", "b", "c", "s", "Pmin", "Pmax", "RU", "RD", "H", "eps")
_ES_FLOATS = ("Pe_max", "Pc_max", "Emin", "Emax", "k", "He_max", "e0", "eps_d", "eps_c")
_RES_SERIES = ("forecast", "err_mean", "err_std", "inertia_forecast", "inertia_err_mean", "inertia_err_std", "mppt")


def _parse_sg(d: dict, k: int) -> SgUnit:
    p = f"sgs[{k}]"
    kw: dict[str, Any] = {f: _num(_get(d, f, p), f"{p}.{f}") for f in _SG_FLOATS}
    return SgUnit(
        id=str(d.get("id", f"G{k + 1}")),
        bus=_int(_get(d, "bus", p), f"{p}.bus"),
        TU=_int(_get(d, "TU", p), f"{p}.TU"),
        TD=_int(_get(d, "TD", p), f"{p}.TD"),
        u0=_int(d.get("u0", 0), f"{p}.u0"),
        p0=_num(d.get("p0", 0.0), f"{p}.p0"),
        **kw,
    )


def _parse_es(d: dict, k: int) -> EsUnit:
    p = f"ess[{k}]"
    kw = {f: _num(_get(d, f, p), f"{p}.{f}") for f in _ES_FLOATS}
    return EsUnit(id=str(d.get("id", f"E{k + 1}")), bus=_int(_get(d, "bus", p), f"{p}.bus"), **kw)


def _parse_res(d: dict, k: int) -> ResUnit:
    p = f"ress[{k}]"
    kw = {f: _series(_get(d, f, p), f"{p}.{f}") for f in _RES_SERIES}
    kind = _get(d, "kind", p)
    if kind not in ("PV", "WT"):
        raise CaseParseError(f"{p}.kind: expected 'PV' or 'WT', got {kind!r}")
    return ResUnit(
        id=str(d.get("id", f"R{k + 1}")),
        bus=_int(_get(d, "bus", p), f"{p}.bus"),
        kind=kind,
        Pmax=_num(_get(d, "Pmax", p), f"{p}.Pmax"),
        eps_h=_num(_get(d, "eps_h", p), f"{p}.eps_h"),
        **kw,
    )


def case_from_dict(doc: dict) -> SystemCase:
    """Build and validate a case from an already-decoded JSON document."""
    if not isinstance(doc, dict):
        raise CaseParseError("top level: expected an object")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise CaseParseError(f"schema_version: unsupported version {version!r}")
    load_doc = _get(doc, "load", "")
    if not isinstance(load_doc, dict):
        raise CaseParseError("load: expected an object keyed by bus id")
    load = {}
    for key, series in load_doc.items():
        try:
            bus = int(key)
        except ValueError:
            raise CaseParseError(f"load.{key}: bus key must be an integer") from None
        load[bus] = _series(series, f"load.{key}")
    case = SystemCase(
        params=_parse_params(_get(doc, "params", "")),
        network=_parse_network(_get(doc, "network", "")),
        sgs=tuple(_parse_sg(d, k) for k, d in enumerate(doc.get("sgs", []))),
        ess=tuple(_parse_es(d, k) for k, d in enumerate(doc.get("ess", []))),
        ress=tuple(_parse_res(d, k) for k, d in enumerate(doc.get("ress", []))),
        load=load,
        name=str(doc.get("name", "")),
    )
    validate_case(case)
    return case


def load_case(path: str | Path) -> SystemCase:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"{path}: malformed JSON ({exc})") from exc
    return case_from_dict(doc)


def case_to_dict(case: SystemCase) -> dict:
    p = case.params
    params: dict[str, Any] = {
        "f0": p.f0, "fmax_prime": p.fmax_prime, "dfmax": p.dfmax, "Hmin": p.Hmin,
        "Psys": p.Psys, "T": p.T, "base_mva": p.base_mva,
    }
    if p.error_mean is not None:
        params["error_mean"] = p.error_mean
    if p.error_std is not None:
        params["error_std"] = p.error_std
    return {
        "schema_version": SCHEMA_VERSION,
        "name": case.name,
        "params": params,
        "network": {
            "buses": list(case.network.buses),
            "lines": [{"from": ln.i, "to": ln.j, "B": ln.B, "Fmax": ln.Fmax} for ln in case.network.lines],
            "slack_bus": case.network.slack_bus,
        },
        "sgs": [
            {"id": g.id, "bus": g.bus, **{f: getattr(g, f) for f in _SG_FLOATS},
             "TU": g.TU, "TD": g.TD, "u0": g.u0, "p0": g.p0}
            for g in case.sgs
        ],
        "ess": [{"id": e.id, "bus": e.bus, **{f: getattr(e, f) for f in _ES_FLOATS}} for e in case.ess],
        "ress": [
            {"id": r.id, "bus": r.bus, "kind": r.kind, "Pmax": r.Pmax, "eps_h": r.eps_h,
             **{f: list(getattr(r, f)) for f in _RES_SERIES}}
            for r in case.ress
        ],
        "load": {str(bus): list(series) for bus, series in case.load.items()},
    }


def dump_case(case: SystemCase, path: str | Path) -> None:
    Path(path).write_text(json.dumps(case_to_dict(case), indent=1))


# --------------------------------------------------------------------------- validation


def _check(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise CaseValidationError(path, message)


def _finite(x: float) -> bool:
    return math.isfinite(x)


def validate_case(case: SystemCase) -> None:
    """Raise :class:`CaseValidationError` on the first violated invariant."""
    p = case.params
    for f in ("f0", "fmax_prime", "dfmax", "Hmin", "Psys", "base_mva"):
        v = getattr(p, f)
        _check(_finite(v) and v > 0, f"params.{f}", f"must be > 0, got {v}")
    _check(p.T >= 1, "params.T", f"must be >= 1, got {p.T}")
    if p.error_std is not None:
        _check(p.error_std >= 0, "params.error_std", "must be >= 0")
    T = p.T

    net = case.network
    buses = set(net.buses)
    _check(len(buses) == len(net.buses) and len(buses) > 0, "network.buses", "bus ids must be unique and nonempty")
    _check(net.slack_bus in buses, "network.slack_bus", f"unknown bus {net.slack_bus}")
    for k, ln in enumerate(net.lines):
        lp = f"network.lines[{k}]"
        _check(ln.i in buses, f"{lp}.from", f"unknown bus {ln.i}")
        _check(ln.j in buses, f"{lp}.to", f"unknown bus {ln.j}")
        _check(ln.i != ln.j, lp, "self-loop")
        _check(ln.B > 0, f"{lp}.B", f"susceptance must be > 0, got {ln.B}")
        _check(ln.Fmax > 0, f"{lp}.Fmax", f"thermal limit must be > 0, got {ln.Fmax}")
    _check(_connected(net), "network", "graph is not connected")

    ids: set[str] = set()
    for k, g in enumerate(case.sgs):
        gp = f"sgs[{k}]({g.id})"
        _check(g.id not in ids, f"{gp}.id", "duplicate unit id")
        ids.add(g.id)
        _check(g.bus in buses, f"{gp}.bus", f"unknown bus {g.bus}")
        for f in _SG_FLOATS:
            _check(_finite(getattr(g, f)), f"{gp}.{f}", "must be finite")
        _check(0 <= g.Pmin <= g.Pmax, f"{gp}.Pmin", f"need 0 <= Pmin <= Pmax, got Pmin={g.Pmin}, Pmax={g.Pmax}")
        _check(g.a >= 0, f"{gp}.a", "quadratic cost must be >= 0")
        _check(g.RU >= 0, f"{gp}.RU", "ramp limit must be >= 0")
        _check(g.RD >= 0, f"{gp}.RD", "ramp limit must be >= 0")
        _check(g.TU >= 1, f"{gp}.TU", "minimum up time must be >= 1")
        _check(g.TD >= 1, f"{gp}.TD", "minimum down time must be >= 1")
        _check(0 < g.eps < 0.5, f"{gp}.eps", f"chance level must be in (0, 0.5), got {g.eps}")
        _check(g.H >= 0, f"{gp}.H", "inertia constant must be >= 0")
        _check(g.u0 in (0, 1), f"{gp}.u0", "initial status must be 0 or 1")
        _check(g.p0 >= 0, f"{gp}.p0", "initial output must be >= 0")

    for k, e in enumerate(case.ess):
        ep = f"ess[{k}]({e.id})"
        _check(e.id not in ids, f"{ep}.id", "duplicate unit id")
        ids.add(e.id)
        _check(e.bus in buses, f"{ep}.bus", f"unknown bus {e.bus}")
        _check(e.Pe_max >= 0, f"{ep}.Pe_max", "must be >= 0")
        _check(e.Pc_max >= 0, f"{ep}.Pc_max", "must be >= 0")
        _check(0 <= e.Emin <= e.e0 <= e.Emax, f"{ep}.e0", f"need 0 <= Emin <= e0 <= Emax, got {e.Emin}, {e.e0}, {e.Emax}")
        _check(0 < e.k <= 1, f"{ep}.k", f"efficiency must be in (0, 1], got {e.k}")
        _check(e.He_max >= 0, f"{ep}.He_max", "must be >= 0")
        _check(0 < e.eps_d < 1, f"{ep}.eps_d", "chance level must be in (0, 1)")
        _check(0 < e.eps_c < 1, f"{ep}.eps_c", "chance level must be in (0, 1)")

    for k, r in enumerate(case.ress):
        rp = f"ress[{k}]({r.id})"
        _check(r.id not in ids, f"{rp}.id", "duplicate unit id")
        ids.add(r.id)
        _check(r.bus in buses, f"{rp}.bus", f"unknown bus {r.bus}")
        _check(r.Pmax >= 0, f"{rp}.Pmax", "must be >= 0")
        _check(0 < r.eps_h < 1, f"{rp}.eps_h", "chance level must be in (0, 1)")
        for f in _RES_SERIES:
            _check(len(getattr(r, f)) == T, f"{rp}.{f}", f"length must equal T={T}")
        tol = 1e-9 * max(1.0, r.Pmax)
        for t in range(T):
            _check(r.forecast[t] >= -tol, f"{rp}.forecast[{t}]", "must be >= 0")
            _check(r.forecast[t] <= r.mppt[t] + tol, f"{rp}.forecast[{t}]", "must not exceed mppt")
            _check(r.mppt[t] <= r.Pmax + tol, f"{rp}.mppt[{t}]", "must not exceed Pmax")
            _check(r.err_std[t] >= 0, f"{rp}.err_std[{t}]", "must be >= 0")
            _check(r.inertia_err_std[t] >= 0, f"{rp}.inertia_err_std[{t}]", "must be >= 0")

    for bus, series in case.load.items():
        _check(bus in buses, f"load.{bus}", "unknown bus")
        _check(len(series) == T, f"load.{bus}", f"length must equal T={T}")
        for t, d in enumerate(series):
            _check(_finite(d), f"load.{bus}[{t}]", "must be finite")


def _connected(net: Network) -> bool:
    adj: dict[int, list[int]] = {b: [] for b in net.buses}
    for ln in net.lines:
        if ln.i in adj and ln.j in adj:
            adj[ln.i].append(ln.j)
            adj[ln.j].append(ln.i)
    seen = {net.buses[0]}
    queue = deque(seen)
    while queue:
        for nb in adj[queue.popleft()]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen) == len(net.buses)


# --------------------------------------------------------------------------- penetration


def res_energy_share(case: SystemCase) -> float:
    demand = sum(case.total_load())
    return sum(sum(r.forecast) for r in case.ress) / demand


def scale_penetration(case: SystemCase, eta: float) -> SystemCase:
    """Rescale every RES unit by one factor so forecast energy is ``eta`` of total demand.

    Forecast, mppt, capacity and the power-error parameters are multiplied by the
    same factor; inertia forecasts (seconds) are left alone.
    """
    if not 0 <= eta < 1:
        raise ValueError(f"eta must be in [0, 1), got {eta}")
    demand = sum(case.total_load())
    if demand <= 0:
        raise ValueError("total demand must be positive")
    energy = sum(sum(r.forecast) for r in case.ress)
    if eta > 0 and energy <= 0:
        raise ValueError("infeasible scaling: the case has no RES forecast energy to scale")
    k = 0.0 if eta == 0 else eta * demand / energy
    if eta > 0 and abs(k - 1.0) <= 1e-12:
        return case

    def mul(series: tuple[float, ...]) -> tuple[float, ...]:
        return tuple(k * v for v in series)

    ress = tuple(
        replace(r, Pmax=k * r.Pmax, forecast=mul(r.forecast), mppt=mul(r.mppt),
                err_mean=mul(r.err_mean), err_std=mul(r.err_std))
        for r in case.ress
    )
    return replace(case, ress=ress)
