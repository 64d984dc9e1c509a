"""Scenario matrix: solve, price, settle, audit and simulate each (penetration, scenario) cell."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .case import SystemCase, load_case, scale_penetration
from .chance import monte_carlo_chance_check
from .freq import SfrParams, scenario_frequency_metrics, write_metrics
from .model import ModelOptions, Problem, build_model, system_inertia
from .pricing import (PriceSeries, achp_prices, aip_prices, allocate_startup, kkt_price_audit, mp_prices)
from .settlement import inertia_deficits, rmr_schedule, settle
from .solver import DecisionSchedule, DualRecord, InfeasibleError, solution_dump, solve_auto, solve_fixed_qp

log = logging.getLogger(__name__)

MANIFEST_SCHEMA = 1
ALL_SCENARIOS = ("base", "rmr", "mp", "achp", "aip")


@dataclass
class ScenarioSpec:
    case_path: str
    etas: list = field(default_factory=lambda: [None])
    scenarios: tuple = ALL_SCENARIOS
    gap: float = 1e-4
    nodes: int = 50_000
    time_limit: float | None = None
    method: str = "auto"
    allocation: str = "uniform"
    out: str = "out"
    seed: int = 0
    mc_samples: int = 100_000
    margin_convention: str = "exact"
    outage_mw: float | None = None
    relax_offline: bool = False

    def __post_init__(self):
        if not self.scenarios:
            raise ValueError("scenario set must not be empty")
        bad = [s for s in self.scenarios if s not in ALL_SCENARIOS]
        if bad:
            raise ValueError(f"unknown scenarios {bad}; choose from {ALL_SCENARIOS}")
        for eta in self.etas:
            if eta is not None and not 0 <= eta < 1:
                raise ValueError(f"eta must be in [0, 1), got {eta}")


def sha256_of(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _clean(obj):
    """Replace non-finite floats so JSON output stays standard."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")
    return path


def eta_label(eta) -> str:
    return "eta_case" if eta is None else f"eta_{eta:g}"


# --------------------------------------------------------------------------- shared solves


class _EtaContext:
    """Lazily computed solves shared by the scenarios of one penetration level."""

    def __init__(self, case: SystemCase, spec: ScenarioSpec):
        self.case = case
        self.spec = spec
        self._cache: dict = {}

    def problem(self, inertia: bool) -> Problem:
        key = ("problem", inertia)
        if key not in self._cache:
            self._cache[key] = build_model(self.case, options=ModelOptions(
                inertia=inertia, margin_convention=self.spec.margin_convention))
        return self._cache[key]

    def solved(self, inertia: bool) -> tuple[DecisionSchedule, DualRecord]:
        key = ("solved", inertia)
        if key not in self._cache:
            pr = self.problem(inertia)
            s = solve_auto(pr, gap=self.spec.gap, node_limit=self.spec.nodes, time_limit=self.spec.time_limit,
                           method=self.spec.method)
            sched, duals = solve_fixed_qp(pr, s.u)
            sched.status, sched.gap, sched.bound, sched.node_count = s.status, s.gap, s.bound, s.node_count
            self._cache[key] = (sched, duals)
        return self._cache[key]


# --------------------------------------------------------------------------- cell


def _write_inertia(path: Path, case: SystemCase, problem: Problem, sched: DecisionSchedule) -> Path:
    req = case.inertia_requirement()
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["hour", "requirement", "provided", "deficit"])
        for t in range(case.T):
            have = system_inertia(case, problem.margins, sched.u, sched.He, t)
            wr.writerow([t, repr(float(req)), repr(have), repr(max(0.0, req - have))])
    return path


def _write_dispatch(path: Path, case: SystemCase, sched: DecisionSchedule) -> Path:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["unit", "kind", "bus", "hour", "u", "p", "alpha", "mppt"])
        for g, sg in enumerate(case.sgs):
            for t in range(case.T):
                wr.writerow([sg.id, "SG", sg.bus, t, int(round(sched.u[g, t])), repr(float(sched.P[g, t])),
                             repr(float(sched.alpha[g, t])), ""])
        for e, es in enumerate(case.ess):
            for t in range(case.T):
                wr.writerow([es.id, "ES", es.bus, t, 1, repr(float(sched.Pd[e, t] - sched.Pc[e, t])),
                             repr(float(sched.ad[e, t] - sched.ac[e, t])), ""])
        for r in case.ress:
            for t in range(case.T):
                wr.writerow([r.id, r.kind, r.bus, t, 1, repr(float(r.forecast[t])), "0.0", repr(float(r.mppt[t]))])
    return path


def _write_kkt(path: Path, records) -> Path:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["hour", "quantity", "assembled", "dual", "ok", "note"])
        for r in records:
            wr.writerow([r.hour, r.quantity, repr(r.assembled), repr(r.dual), int(r.ok), r.note])
    return path


def run_cell(ctx: _EtaContext, scenario: str, eta, cell_dir: Path) -> dict:
    """Run one scenario; every stage failure is recorded and the remaining stages are skipped."""
    spec, case = ctx.spec, ctx.case
    cell_dir.mkdir(parents=True, exist_ok=True)
    artifacts: list[Path] = []
    stages: dict[str, str] = {}
    errors: list[dict] = []
    checks: dict = {}
    summary: dict = {}
    inertia_on = scenario != "base"
    stage = "solve"
    try:
        problem = ctx.problem(inertia_on)
        if scenario == "rmr":
            base_sched, _ = ctx.solved(False)
            overlay, sched, duals = rmr_schedule(problem, base_sched)
            summary["rmr_added_unit_hours"] = int(overlay.added.sum())
        else:
            sched, duals = ctx.solved(inertia_on)
        stages[stage] = "ok"
        artifacts.append(write_json(cell_dir / "schedule.json", solution_dump(problem, sched, duals)))
        artifacts.append(_write_dispatch(cell_dir / "dispatch.csv", case, sched))
        artifacts.append(_write_inertia(cell_dir / "inertia.csv", case, problem, sched))
        deficit = inertia_deficits(case, problem.margins, sched)
        summary.update(objective=sched.objective, gap=sched.gap, node_count=sched.node_count,
                       committed_max=int(np.round(sched.u).sum(axis=0).max()) if case.sgs else 0,
                       deficit_hours=[int(t) for t in np.nonzero(deficit)[0]])
        checks["gap_ok"] = bool(sched.gap <= max(spec.gap, 1e-9) * 1.0001 or sched.status == "optimal")

        stage = "price"
        prices = _prices_for(ctx, scenario, problem, sched, duals)
        stages[stage] = "ok"
        artifacts += prices.write(cell_dir, "prices")
        if scenario in ("mp", "achp", "aip"):
            primal = prices.primal or {"P": sched.P, "alpha": sched.alpha, "u": sched.u}
            bcoef = np.asarray(prices.metadata["bhat"]) if scenario == "aip" else None
            audit = kkt_price_audit(case, problem.margins, prices, primal, sched.ad, sched.ac,
                                    coupled=scenario == "mp", bcoef=bcoef)
            artifacts.append(_write_kkt(cell_dir / "kkt_audit.csv", audit))
            checks["kkt_mismatches"] = sum(not r.ok for r in audit)

        stage = "settle"
        report = settle(case, sched, prices, eta=eta)
        stages[stage] = "ok"
        artifacts += report.write(cell_dir, "settlement")
        summary.update(total_uplift=report.total_uplift, consumer_payment=report.consumer_payment)

        stage = "chance"
        fams = ("sg_upper", "sg_lower", "es_discharge", "es_charge") + (("inertia",) if inertia_on else ())
        mc = monte_carlo_chance_check(case, sched, problem.margins, N=spec.mc_samples, seed=spec.seed,
                                      families=fams)
        stages[stage] = "ok"
        mc_doc = {k: {"min_rate": v.min_rate, "threshold": v.threshold, "rows": v.rows,
                      "flagged": len(v.flagged), "worst": list(v.worst) if v.worst else None}
                  for k, v in sorted(mc.items())}
        artifacts.append(write_json(cell_dir / "chance.json", mc_doc))
        checks["chance_ok"] = all(v.ok for v in mc.values())

        stage = "frequency"
        levels = [system_inertia(case, problem.margins, sched.u, sched.He, t) for t in range(case.T)]
        hours = sorted({int(np.argmin(levels)), int(np.argmax(levels))})
        schedules = {scenario: sched}
        if scenario != "base":
            try:
                schedules["base"] = ctx.solved(False)[0]
            except InfeasibleError:
                pass
        dP = spec.outage_mw or max((sg.Pmax for sg in case.sgs), default=1.0)
        dP = min(dP, 0.5 * min(case.total_load()))
        metrics = scenario_frequency_metrics(case, schedules, hours, dP, SfrParams(), problem.margins)
        artifacts.append(write_metrics(metrics, cell_dir / "frequency.csv"))
        stages[stage] = "ok"
    except InfeasibleError as exc:
        stages[stage] = "failed"
        errors.append({"stage": stage, "kind": "infeasible", "message": str(exc), "family": exc.family})
    except Exception as exc:  # recorded, the matrix carries on
        stages[stage] = "failed"
        errors.append({"stage": stage, "kind": type(exc).__name__, "message": str(exc)})
        log.exception("stage %s failed for %s", stage, scenario)

    return _write_manifest(cell_dir, scenario, eta, case.name, stages, errors, checks, summary, artifacts)


def _write_manifest(cell_dir: Path, scenario: str, eta, case_name: str, stages: dict, errors: list, checks: dict,
                    summary: dict, artifacts: list[Path]) -> dict:
    manifest = {
        "schema_version": MANIFEST_SCHEMA,
        "scenario": scenario,
        "eta": eta,
        "case": case_name,
        "stages": stages,
        "errors": errors,
        "checks": checks,
        "summary": summary,
        "artifacts": [{"path": p.name, "sha256": sha256_of(p), "bytes": p.stat().st_size}
                      for p in sorted(artifacts, key=lambda q: q.name)],
    }
    write_json(cell_dir / "manifest.json", manifest)
    return manifest


def _prices_for(ctx: _EtaContext, scenario: str, problem: Problem, sched: DecisionSchedule,
                duals: DualRecord) -> PriceSeries:
    case, spec = ctx.case, ctx.spec
    if scenario in ("base", "rmr", "mp"):
        ps = mp_prices(duals, case, scheme=scenario.upper())
        if scenario == "rmr":
            # out-of-market inertia is compensated through uplift, not a price
            ps.chi = np.zeros_like(ps.chi)
            ps.metadata["chi"] = "zero by construction"
        return ps
    if scenario == "achp":
        alloc = allocate_startup(case, sched, spec.allocation)
        return achp_prices(case, sched, problem.margins, alloc, relax_offline=spec.relax_offline)
    return aip_prices(case, sched, problem.margins, relax_offline=spec.relax_offline)


# --------------------------------------------------------------------------- matrix


def run(spec: ScenarioSpec, case: SystemCase | None = None) -> dict:
    """Run every (eta, scenario) cell and write a top-level index of the cell manifests."""
    base_case = case if case is not None else load_case(spec.case_path)
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = []
    for eta in spec.etas:
        try:
            c = base_case if eta is None else scale_penetration(base_case, eta)
            scale_error = None
        except Exception as exc:
            c, scale_error = None, {"stage": "scale", "kind": type(exc).__name__, "message": str(exc)}
        ctx = _EtaContext(c, spec) if c is not None else None
        for scenario in spec.scenarios:
            cell_dir = out / eta_label(eta) / scenario
            if ctx is None:
                cell_dir.mkdir(parents=True, exist_ok=True)
                m = _write_manifest(cell_dir, scenario, eta, base_case.name, {"scale": "failed"}, [scale_error],
                                    {}, {}, [])
            else:
                m = run_cell(ctx, scenario, eta, cell_dir)
            path = cell_dir / "manifest.json"
            cells.append({"eta": eta, "scenario": scenario, "manifest": str(path.relative_to(out)),
                          "sha256": sha256_of(path), "errors": len(m["errors"])})
    spec_doc = asdict(spec)
    spec_doc["case_path"] = Path(spec.case_path).name if spec.case_path else None
    spec_doc.pop("out")
    index = {"schema_version": MANIFEST_SCHEMA, "spec": spec_doc, "cells": cells}
    write_json(out / "manifest.json", index)
    return index
