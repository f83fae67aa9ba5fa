"""Command line entry point: ``python -m qcsmooth <subcommand> --config run.json --out dir``.

Exit status is 0 only when every validation of the run passes.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .classical_flow import classical_constant
from .experiments import (RunConfig, emit_report, locked_output, report_dict, run_correspondence,
                          run_escape_scaling, run_probes)
from .potential import ConfigurationError, check_assumption

log = logging.getLogger("qcsmooth")
STEP_CHECK_TOL = 1e-4


def _load(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    return config.with_overrides(grid_n=args.grid_n, seed=args.seed)


def _step_check(config: RunConfig) -> dict:
    """Classical constants at h and h/2; the relative change bounds the time-step error."""
    out = []
    half = dataclasses.replace(config.search, h=config.search.h / 2)
    for R in config.R_list:
        a = classical_constant(config.potential, config.T, config.nu, R, config.search).value
        b = classical_constant(config.potential, config.T, config.nu, R, half).value
        out.append({"R": R, "C0_h": a, "C0_half_h": b, "rel_change": abs(a - b) / max(abs(b), 1e-300)})
    worst = max((r["rel_change"] for r in out), default=0.0)
    return {"rows": out, "worst": worst, "tol": STEP_CHECK_TOL, "pass": worst <= STEP_CHECK_TOL}


def cmd_correspondence(config: RunConfig, out: Path, args) -> bool:
    report = run_correspondence(config, log=log.info)
    probes = run_probes(config, report) if config.probes else None
    emit_report(report, out, config, probes=probes)
    ok = report.all_pass
    if args.check_step:
        check = _step_check(config)
        _merge_json(out / "report.json", {"step_check": check})
        log.info("step-halving check: worst relative change %.3e", check["worst"])
        ok = ok and check["pass"]
    log.info("fitted c = %.6g, inequalities_pass=%s, excluded=%s", report.c, report.inequalities_pass, report.excluded)
    for note in report.notes:
        log.warning(note)
    return ok


def cmd_escape(config: RunConfig, out: Path, args) -> bool:
    rep = run_escape_scaling(config)
    emit_report(None, out, config, escape=rep)
    for note in rep.notes:
        log.warning(note)
    log.info("slope %.4f, C' %.4g, spread %.3f", rep.slope, rep.C_prime, rep.spread)
    return not rep.notes


def cmd_probe(config: RunConfig, out: Path, args) -> bool:
    rows = run_probes(config)
    emit_report(None, out, config, probes=rows)
    for r in rows:
        log.info("center=%s R=%g S=%.8g A=%.8g %s", r.center, r.R, r.S, r.A, r.status)
    return all(r.status == "ok" and r.below_constant for r in rows)


def cmd_check_assumption(config: RunConfig, out: Path, args) -> bool:
    half, npts = config.assumption_box
    rep = check_assumption(config.potential, (float(half), int(npts)), config.assumption_order, seed=config.seed)
    data = report_dict(None, config)
    data["assumption"] = dataclasses.asdict(rep)
    (out / "assumption.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    print(rep.summary())
    return rep.passed


def _merge_json(path: Path, extra: dict):
    data = json.loads(path.read_text())
    data.update(extra)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


COMMANDS = {
    "correspondence": cmd_correspondence,
    "escape": cmd_escape,
    "probe": cmd_probe,
    "check-assumption": cmd_check_assumption,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcsmooth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON run configuration (defaults used if omitted)")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--grid-n", type=int, help="override grid points per axis")
        p.add_argument("--seed", type=int, help="override sampler seed")
        p.add_argument("--check-step", action="store_true",
                       help="also recompute classical constants at half the time step")
        p.add_argument("-q", "--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        config = _load(args)
        with locked_output(args.out) as out:
            ok = COMMANDS[args.command](config, out, args)
    except (ConfigurationError, OSError, RuntimeError) as exc:
        print(f"qcsmooth: error: {exc}", file=sys.stderr)
        return 2
    return 0 if ok else 1
