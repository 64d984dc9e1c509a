"""Command-line entry point.

Option values resolve as: command-line flag, then ``INERTIA_UC_<NAME>`` environment
variable, then the ``--config`` JSON file, then built-in defaults.

Exit codes: 0 success, 1 case parse or validation error, 2 infeasible model,
3 a tolerance check failed (chance rates, price audit, optimality gap).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .case import CaseParseError, CaseValidationError, load_case, scale_penetration
from .chance import monte_carlo_chance_check
from .freq import SfrParams, simulate_outage
from .model import ModelOptions, build_model, system_inertia
from .pipeline import ALL_SCENARIOS, ScenarioSpec, run, write_json
from .pricing import ALLOCATION_RULES, PriceSeries, achp_prices, aip_prices, allocate_startup, kkt_price_audit, mp_prices
from .settlement import settle
from .solver import DecisionSchedule, InfeasibleError, solution_dump, solve_auto, solve_fixed_qp

EXIT_OK, EXIT_CASE, EXIT_INFEASIBLE, EXIT_TOLERANCE = 0, 1, 2, 3
ENV_PREFIX = "INERTIA_UC_"

DEFAULTS = {
    "gap": 1e-4,
    "nodes": 50_000,
    "time_limit": None,
    "method": "auto",
    "allocation": "uniform",
    "out": "out",
    "seed": 0,
    "mc_samples": 100_000,
    "margin_convention": "exact",
    "eta": None,
    "scenarios": list(ALL_SCENARIOS),
    "outage_mw": None,
}

_CASTS = {"gap": float, "nodes": int, "time_limit": float, "seed": int, "mc_samples": int, "outage_mw": float}

log = logging.getLogger("inertia_uc")


def _env_value(name: str):
    raw = os.environ.get(ENV_PREFIX + name.upper())
    if raw is None:
        return None
    if name == "eta":
        return [float(x) for x in raw.replace(",", " ").split()]
    if name == "scenarios":
        return raw.replace(",", " ").split()
    return _CASTS.get(name, str)(raw)


def resolve_options(args: argparse.Namespace) -> dict:
    """Merge flags, environment and config file over the defaults."""
    config = {}
    if getattr(args, "config", None):
        config = json.loads(Path(args.config).read_text())
        unknown = set(config) - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
    opts = {}
    for name, default in DEFAULTS.items():
        flag = getattr(args, name, None)
        env = _env_value(name)
        if flag is not None:
            opts[name] = flag
        elif env is not None:
            opts[name] = env
        elif name in config:
            opts[name] = config[name]
        else:
            opts[name] = default
    return opts


def _single_eta(opts: dict):
    eta = opts["eta"]
    if isinstance(eta, list):
        if len(eta) > 1:
            raise ValueError("this command takes a single --eta")
        eta = eta[0] if eta else None
    return eta


def _load(case_path: str, eta):
    case = load_case(case_path)
    return case if eta is None else scale_penetration(case, eta)


def _problem(case, opts, inertia: bool = True):
    return build_model(case, options=ModelOptions(inertia=inertia, margin_convention=opts["margin_convention"]))


def _schedule_from(path: str) -> DecisionSchedule:
    doc = json.loads(Path(path).read_text())
    return DecisionSchedule.from_dict(doc.get("schedule", doc))


# --------------------------------------------------------------------------- commands


def cmd_validate(args, opts) -> int:
    case = load_case(args.case)
    print(f"{case.name}: ok ({len(case.sgs)} SG, {len(case.ess)} ES, {len(case.ress)} RES, T={case.T})")
    return EXIT_OK


def cmd_solve(args, opts) -> int:
    case = _load(args.case, _single_eta(opts))
    pr = _problem(case, opts, inertia=not args.no_inertia)
    s = solve_auto(pr, gap=opts["gap"], node_limit=opts["nodes"], time_limit=opts["time_limit"],
                   method=opts["method"])
    sched, duals = solve_fixed_qp(pr, s.u)
    sched.status, sched.gap, sched.bound, sched.node_count = s.status, s.gap, s.bound, s.node_count
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "schedule.json", solution_dump(pr, sched, duals))
    print(f"objective {sched.objective:.6f} gap {sched.gap:.2e} nodes {sched.node_count} status {sched.status}")
    code = EXIT_OK
    if sched.gap > opts["gap"] * 1.0001 and sched.status != "optimal":
        code = EXIT_TOLERANCE
    if args.check:
        mc = monte_carlo_chance_check(case, sched, pr.margins, N=opts["mc_samples"], seed=opts["seed"])
        for fam, r in sorted(mc.items()):
            print(f"  {fam:13s} min rate {r.min_rate:.4f} threshold {r.threshold:.4f} flagged {len(r.flagged)}")
        if not all(r.ok for r in mc.values()):
            code = EXIT_TOLERANCE
    return code


def cmd_price(args, opts) -> int:
    case = _load(args.case, _single_eta(opts))
    pr = _problem(case, opts)
    sched = _schedule_from(args.schedule)
    scheme = args.scheme.lower()
    if scheme == "mp":
        fixed, duals = solve_fixed_qp(pr, sched.u)
        prices = mp_prices(duals, case)
        primal = {"P": fixed.P, "alpha": fixed.alpha, "u": fixed.u}
        bcoef = None
    elif scheme == "achp":
        prices = achp_prices(case, sched, pr.margins, allocate_startup(case, sched, opts["allocation"]))
        primal, bcoef = prices.primal, None
    else:
        prices = aip_prices(case, sched, pr.margins)
        primal, bcoef = prices.primal, np.asarray(prices.metadata["bhat"])
    out = Path(opts["out"])
    for p in prices.write(out, args.stem or scheme):
        print(p)
    audit = kkt_price_audit(case, pr.margins, prices, primal, sched.ad, sched.ac, coupled=scheme == "mp",
                            bcoef=bcoef)
    bad = [r for r in audit if not r.ok]
    print(f"price audit: {len(audit)} checks, {len(bad)} mismatches")
    return EXIT_TOLERANCE if bad else EXIT_OK


def cmd_settle(args, opts) -> int:
    case = _load(args.case, _single_eta(opts))
    sched = _schedule_from(args.schedule)
    prices = PriceSeries.read(args.prices, args.stem)
    report = settle(case, sched, prices, eta=_single_eta(opts))
    for p in report.write(opts["out"]):
        print(p)
    s = report.summary()
    print(f"uplift {s['total_uplift']:.4f} consumer payment {s['consumer_payment']:.4f}")
    return EXIT_OK


def cmd_simulate(args, opts) -> int:
    if args.energy is not None:
        E, load = args.energy, args.load
        if load is None:
            raise ValueError("--load is required with --energy")
        f0 = args.f0
    else:
        if args.case is None or args.schedule is None or args.hour is None:
            raise ValueError("give --energy/--load or --case/--schedule/--hour")
        case = _load(args.case, _single_eta(opts))
        sched = _schedule_from(args.schedule)
        margins = _problem(case, opts).margins
        E = system_inertia(case, margins, sched.u, sched.He, args.hour)
        load = case.total_load()[args.hour]
        f0 = case.params.f0
    dP = args.dp if args.dp is not None else opts["outage_mw"]
    if dP is None:
        raise ValueError("--dp is required")
    traj = simulate_outage(E, load, dP, SfrParams(), f0)
    print(f"E {E:.3f} MW s  rocof {traj.rocof_initial:.6f} Hz/s  nadir {traj.nadir:.6f} Hz at {traj.nadir_time:.3f} s")
    if args.trajectory:
        traj.write(args.trajectory)
    return EXIT_OK


def cmd_run_matrix(args, opts) -> int:
    etas = opts["eta"]
    etas = [None] if etas is None else (etas if isinstance(etas, list) else [etas])
    spec = ScenarioSpec(
        case_path=args.case, etas=etas, scenarios=tuple(opts["scenarios"]), gap=opts["gap"], nodes=opts["nodes"],
        time_limit=opts["time_limit"], method=opts["method"], allocation=opts["allocation"], out=opts["out"],
        seed=opts["seed"], mc_samples=opts["mc_samples"], margin_convention=opts["margin_convention"],
        outage_mw=opts["outage_mw"])
    case = load_case(args.case)
    index = run(spec, case)
    out = Path(opts["out"])
    infeasible = tolerance = case_err = False
    for cell in index["cells"]:
        m = json.loads((out / cell["manifest"]).read_text())
        checks = m["checks"]
        failed = [k for k, v in checks.items() if v is False] + (["kkt"] if checks.get("kkt_mismatches") else [])
        kinds = {e["kind"] for e in m["errors"]}
        infeasible |= "infeasible" in kinds
        case_err |= any(e["stage"] == "scale" for e in m["errors"])
        tolerance |= bool(failed) or any(e["kind"] != "infeasible" and e["stage"] != "scale" for e in m["errors"])
        status = "ok" if not failed and not kinds else ",".join(sorted(kinds) + failed)
        print(f"{cell['manifest']}: {status}")
    if case_err:
        return EXIT_CASE
    if infeasible:
        return EXIT_INFEASIBLE
    return EXIT_TOLERANCE if tolerance else EXIT_OK


# --------------------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, case_required: bool = True) -> None:
    p.add_argument("--case", required=case_required, help="case JSON file")
    p.add_argument("--config", help="JSON file of option defaults")
    p.add_argument("--eta", type=float, nargs="+", default=None, help="renewable energy share(s)")
    p.add_argument("--gap", type=float, default=None)
    p.add_argument("--nodes", type=int, default=None, help="branch-and-bound node limit")
    p.add_argument("--time-limit", dest="time_limit", type=float, default=None)
    p.add_argument("--method", choices=("auto", "bnb", "milp"), default=None)
    p.add_argument("--allocation", choices=ALLOCATION_RULES, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mc-samples", dest="mc_samples", type=int, default=None)
    p.add_argument("--margin-convention", dest="margin_convention", choices=("exact", "literal"), default=None)
    p.add_argument("--outage-mw", dest="outage_mw", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="inertia-uc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate a case file")
    _common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="solve the commitment problem and write schedule.json")
    _common(p)
    p.add_argument("--no-inertia", action="store_true", help="drop the system inertia row")
    p.add_argument("--check", action="store_true", help="Monte-Carlo check of the chance constraints")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("price", help="compute prices for a solved schedule")
    _common(p)
    p.add_argument("--schedule", required=True)
    p.add_argument("--scheme", choices=("mp", "achp", "aip"), default="mp")
    p.add_argument("--stem", default=None)
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("settle", help="settle a schedule against written prices")
    _common(p)
    p.add_argument("--schedule", required=True)
    p.add_argument("--prices", required=True, help="directory holding the price files")
    p.add_argument("--stem", required=True)
    p.set_defaults(func=cmd_settle)

    p = sub.add_parser("simulate", help="frequency response after a generation outage")
    _common(p, case_required=False)
    p.add_argument("--energy", type=float, default=None, help="kinetic energy, MW s")
    p.add_argument("--load", type=float, default=None, help="system load, MW")
    p.add_argument("--f0", type=float, default=60.0)
    p.add_argument("--schedule", default=None)
    p.add_argument("--hour", type=int, default=None)
    p.add_argument("--dp", type=float, default=None, help="lost generation, MW")
    p.add_argument("--trajectory", default=None, help="write the trajectory CSV here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run-matrix", help="run every (eta, scenario) cell")
    _common(p)
    p.add_argument("--scenarios", nargs="+", choices=ALL_SCENARIOS, default=None)
    p.set_defaults(func=cmd_run_matrix)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        opts = resolve_options(args)
        return args.func(args, opts)
    except (CaseParseError, CaseValidationError) as exc:
        print(f"case error: {exc}", file=sys.stderr)
        return EXIT_CASE
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CASE


if __name__ == "__main__":
    sys.exit(main())
