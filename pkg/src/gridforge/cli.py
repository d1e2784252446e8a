"""Command-line front door.

Subcommands: ``design`` (synthesize a controller set), ``analyze``
(frequency-domain sweeps of a stored design), ``simulate`` (run scenarios) and
``verify`` (acceptance suite). Data paths go to stdout; diagnostics to stderr.

Exit codes: 0 success, 1 parse/validation error, 2 synthesis infeasible,
3 singular loop, 4 numerical abort, 5 verification failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import logging
import math
import os
import sys
from pathlib import Path

import yaml

__all__ = ["main"]

log = logging.getLogger("gridforge")

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_INFEASIBLE = 2
EXIT_SINGULAR = 3
EXIT_NUMERIC = 4
EXIT_VERIFY = 5


def _thread_cap() -> int:
    raw = os.environ.get("GRIDFORGE_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return max(1, os.cpu_count() or 1)


def _load_design_config(path: str, overrides: list[str]) -> dict:
    from .scenario import ValidationError, apply_overrides, bundled_scenario_path

    p = Path(path)
    if not p.exists():
        bundled = bundled_scenario_path(path)
        if bundled is None:
            raise ValidationError(f"design spec file {path!r} does not exist")
        p = bundled
    config = yaml.safe_load(p.read_text())
    if not isinstance(config, dict):
        raise ValidationError("design spec must be a mapping")
    return apply_overrides(config, overrides)


def _design_from_config(config: dict):
    from .droop import LinePhasor
    from .plant import InverterParams
    from .scenario import ValidationError
    from .synthesis import DesignSpec, synthesize

    try:
        f = config["inverter"]
        li = config["line"]
        ctl = config.get("control", {})
    except KeyError as exc:
        raise ValidationError(f"design spec missing section {exc}") from None
    inv = InverterParams(
        C=f["c_f"], L_i=f["l_i_h"], R_i=f["r_i_ohm"], v_dc=f["v_dc_v"]
    )
    line = LinePhasor(
        R=li["r_ohm"], X=li["x_ohm"], v2=li.get("v2_v", 170.0),
        omega0=2 * math.pi * li.get("f0_hz", 60.0),
    )
    spec = DesignSpec(
        wc=ctl.get("wc_rad_s", 600.0),
        pm_deg=ctl.get("pm_deg", 53.0),
        line=line,
        inverter=inv,
        family=ctl.get("family", "general"),
        gamma_d=ctl.get("gamma_d_ohm", 1.0),
        gamma_q=ctl.get("gamma_q_ohm", 1.0),
        beta_lag=ctl.get("beta_lag", 0.01),
        beta_q=ctl.get("beta_q"),
        notch_xi0=ctl.get("notch_xi0"),
    )
    return synthesize(spec)


def cmd_design(args) -> int:
    from .reports import controllers_to_json, design_report
    from .scenario import ValidationError
    from .synthesis import Infeasible

    try:
        config = _load_design_config(args.spec, args.set or [])
        design = _design_from_config(config)
    except (ValidationError, KeyError, TypeError, yaml.YAMLError) as exc:
        log.error("design spec error: %s", exc)
        return EXIT_PARSE
    except Infeasible as exc:
        log.error("design infeasible: %s", exc)
        return EXIT_INFEASIBLE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "design_report.txt"
    report_path.write_text(design_report(design))
    json_path = out / "controllers.json"
    json_path.write_text(controllers_to_json(design))
    print(report_path)
    print(json_path)
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .figures import render_bode, render_sigma
    from .lineloop import SingularLoop
    from .reports import analysis_report, controllers_from_json

    try:
        design = controllers_from_json(Path(args.controllers).read_text())
    except (OSError, ValueError, KeyError) as exc:
        log.error("controller file error: %s", exc)
        return EXIT_PARSE
    if args.line_r is not None or args.line_x is not None:
        from .droop import LinePhasor
        from .synthesis import InverterDesign

        line = LinePhasor(
            R=args.line_r if args.line_r is not None else design.line.R,
            X=args.line_x if args.line_x is not None else design.line.X,
            v2=design.line.v2,
            omega0=design.line.omega0,
        )
        design = InverterDesign(design.inverter, line, design.controllers,
                                design.measurements)
    out = Path(args.out)
    try:
        results = analysis_report(design, out)
    except (SingularLoop, ZeroDivisionError) as exc:
        log.error("loop analysis singular: %s", exc)
        return EXIT_SINGULAR
    if not args.no_figures:
        results["paths"]["bode_png"] = render_bode(design, out / "bode.png")
        results["paths"]["sigma_png"] = render_sigma(results["sigma_table"], out / "sigma.png")
    for path in sorted(str(p) for p in results["paths"].values()):
        print(path)
    return EXIT_OK


def _simulate_one(path: str, out_root: Path, overrides, decimate, seed, figures: bool) -> int:
    from .engine import run_scenario
    from .figures import render_timeseries
    from .metrics import InsufficientWindow, metrics
    from .scenario import (
        NoVoltageSolution,
        ValidationError,
        apply_overrides,
        build_scenario,
        bundled_scenario_path,
    )

    p = Path(path)
    if not p.exists():
        bundled = bundled_scenario_path(path)
        if bundled is None:
            log.error("no scenario file or bundled scenario named %r", path)
            return EXIT_PARSE
        p = bundled
    try:
        config = yaml.safe_load(p.read_text())
        if overrides:
            config = apply_overrides(config, overrides)
        if decimate is not None:
            config.setdefault("sim", {})["record_every"] = decimate
        if seed is not None:
            config["seed"] = seed
        scenario = build_scenario(config)
    except (ValidationError, NoVoltageSolution, yaml.YAMLError, TypeError) as exc:
        log.error("scenario error in %s: %s", path, exc)
        return EXIT_PARSE

    out = out_root / scenario.name
    out.mkdir(parents=True, exist_ok=True)
    ts, report = run_scenario(scenario)
    csv_path = ts.to_csv(out / "timeseries.csv")
    print(csv_path)
    if report.status == 4:
        dump = ts.data[-100:]
        from .timeseries import TimeSeries

        TimeSeries(ts.columns, dump, ts.meta, ts.events).to_csv(out / "abort_dump.csv")
        log.error("simulation aborted on non-finite state; last samples in %s",
                  out / "abort_dump.csv")
        return EXIT_NUMERIC
    try:
        rpt = metrics(ts, scenario)
        (out / "metrics.txt").write_text(rpt.text() + "\n")
        header, row = rpt.rows()
        (out / "metrics.csv").write_text(
            ",".join(["scenario"] + header) + "\n"
            + ",".join([scenario.name] + [f"{v:.17g}" for v in row]) + "\n"
        )
        print(out / "metrics.txt")
        print(out / "metrics.csv")
    except InsufficientWindow as exc:
        log.warning("metrics skipped: %s", exc)
    if figures:
        print(render_timeseries(ts, out / "timeseries.png"))
    return EXIT_OK


def cmd_simulate(args) -> int:
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    if len(args.scenario) == 1:
        return _simulate_one(
            args.scenario[0], out_root, args.set or [], args.decimate,
            args.seed, not args.no_figures,
        )
    workers = min(_thread_cap(), len(args.scenario))
    codes = []
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(
                _simulate_one, sc, out_root, args.set or [], args.decimate,
                args.seed, not args.no_figures,
            )
            for sc in args.scenario
        ]
        for fut in futures:
            codes.append(fut.result())
    return max(codes)


def cmd_verify(args) -> int:
    from .acceptance import run_all

    results = run_all(args.only or None)
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<{width}}  ({r.runtime_s:7.2f} s)")
        for line in r.details if (args.verbose or not r.passed) else []:
            print(f"      {line}")
        failed += 0 if r.passed else 1
    print(f"{len(results) - failed}/{len(results)} criteria passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridforge",
        description="controller synthesis and microgrid simulation toolkit",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="chatty diagnostics on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="synthesize a controller set from a design spec")
    p.add_argument("spec", help="design spec YAML file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry (dotted path)")
    p.set_defaults(fn=cmd_design)

    p = sub.add_parser("analyze", help="frequency-domain analysis of a stored design")
    p.add_argument("controllers", help="controllers.json from the design step")
    p.add_argument("--line-r", type=float, help="override line resistance [ohm]")
    p.add_argument("--line-x", type=float, help="override line reactance [ohm]")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("simulate", help="run one or more scenarios")
    p.add_argument("scenario", nargs="+",
                   help="scenario YAML path or bundled scenario name")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry (dotted path)")
    p.add_argument("--decimate", type=int, help="record every N control steps")
    p.add_argument("--seed", type=int,
                   help="recorded in outputs; reserved, affects nothing numeric")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("verify", help="run the acceptance suite")
    p.add_argument("--only", action="append", help="run only the named criterion")
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
