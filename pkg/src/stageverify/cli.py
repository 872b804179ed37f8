"""Operator-facing command line.

Exit codes are stable: 0 success, 1 verification completed with errors
(--strict), 2 invalid input (plan/replay/config/arguments), 3 runtime failure
(bind, I/O).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .angle import AmbiguousOrientation, EmptyMask, make_reference, read_pgm, reference_to_json
from .model import ThresholdConfig, ValidationError
from .plan import AssemblyPlan, builtin_hdd_plan, load_plan, validate_plan
from .replayio import InvariantViolation, ReplayFormatError, write_replay_file
from .report import render_figures, render_json, render_markdown
from .session import load_report, run_replay
from .simulate import SCENARIOS, simulate_scenario

EXIT_OK = 0
EXIT_ERRORS_RECORDED = 1
EXIT_INVALID_INPUT = 2
EXIT_RUNTIME = 3


def _load_plan_arg(ref: str) -> AssemblyPlan:
    plan = builtin_hdd_plan() if ref == "builtin" else load_plan(ref)
    diags = validate_plan(plan)
    if diags:
        raise ValidationError("plan", ref, "; ".join(str(d) for d in diags))
    return plan


def _load_config_arg(path: str | None) -> ThresholdConfig:
    if path is None:
        return ThresholdConfig()
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return ThresholdConfig.from_dict(raw)


def _parse_addr(text: str, default_port: int) -> tuple[str, int]:
    if ":" in text:
        host, port = text.rsplit(":", 1)
        return host or "127.0.0.1", int(port)
    return text, default_port


def cmd_verify(args: argparse.Namespace) -> int:
    plan = _load_plan_arg(args.plan)
    cfg = _load_config_arg(args.config)
    with open(args.replay, "rb") as fh:
        data = fh.read()
    report, _log = run_replay(data, plan, cfg)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report.dumps())
    total = len(plan.stages)
    print(
        f"RESULT {report.stages_completed}/{total} stages, "
        f"{report.error_count} errors, {report.total_ms / 1000:.1f} s, {report.outcome}"
    )
    if args.strict and report.error_count > 0:
        return EXIT_ERRORS_RECORDED
    if report.outcome != "Complete":
        return EXIT_ERRORS_RECORDED
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    plan = _load_plan_arg(args.plan)
    records = simulate_scenario(plan, args.scenario, seed=args.seed)
    size = write_replay_file(records, args.out)
    print(f"wrote {len(records)} records ({size} bytes) to {args.out}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from .server import DEFAULT_HTTP_PORT, DEFAULT_SCREW_PORT, DEFAULT_STREAM_PORT, run_live

    plan = _load_plan_arg(args.plan)
    cfg = _load_config_arg(args.config)
    http_addr = _parse_addr(args.listen, DEFAULT_HTTP_PORT)
    screw_addr = _parse_addr(args.screw_listen, DEFAULT_SCREW_PORT)
    stream_addr = _parse_addr(args.stream_listen, DEFAULT_STREAM_PORT)
    print(f"serving http on {http_addr[0]}:{http_addr[1]}, screw link on {screw_addr[1]}, "
          f"stream on {stream_addr[1]}")
    report = run_live(plan, cfg, http_addr, screw_addr, stream_addr, report_path=args.report)
    print(f"session ended: {report.outcome}, {report.stages_completed} stages, {report.error_count} errors")
    return EXIT_OK


def cmd_plan_validate(args: argparse.Namespace) -> int:
    plan = builtin_hdd_plan() if args.path == "builtin" else load_plan(args.path)
    diags = validate_plan(plan)
    if diags:
        for d in diags:
            print(str(d), file=sys.stderr)
        return EXIT_INVALID_INPUT
    print(f"plan {plan.plan_id}: {len(plan.stages)} stages, {len(plan.holes)} holes, valid")
    return EXIT_OK


def cmd_report_render(args: argparse.Namespace) -> int:
    report = load_report(args.path)
    plan = None
    if args.plan:
        plan = _load_plan_arg(args.plan)
    else:
        builtin = builtin_hdd_plan()
        if report.plan_id == builtin.plan_id:
            plan = builtin
    text = render_json(report) if args.format == "json" else render_markdown(report, plan)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.figures:
        for path in render_figures(report, args.figures):
            print(f"figure: {path}", file=sys.stderr)
    return EXIT_OK


def cmd_angle_calibrate(args: argparse.Namespace) -> int:
    img = read_pgm(args.ref)
    ref = make_reference(img, bin_threshold=args.threshold, meta=args.ref)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(reference_to_json(ref))
        fh.write("\n")
    print(f"reference angle {ref.theta_ref_deg:.2f} deg, mask {int(ref.mask.sum())} px -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stageverify",
        description="Assembly stage verification: replay verification, scenario simulation, live serving.",
    )
    parser.add_argument("--version", action="version", version=f"stageverify {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="verify a recorded replay against a plan")
    p.add_argument("--plan", default="builtin", help="plan JSON path or 'builtin'")
    p.add_argument("--replay", required=True, help="replay file (.replay.jsonl)")
    p.add_argument("--config", default=None, help="threshold config JSON")
    p.add_argument("--report", default=None, help="write the operation report JSON here")
    p.add_argument("--strict", action="store_true", help="exit 1 if any error was recorded")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="generate a scenario replay")
    p.add_argument("--plan", default="builtin")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="run a live session with stream/screw listeners and the HTTP API")
    p.add_argument("--plan", default="builtin")
    p.add_argument("--listen", default="127.0.0.1:7700", help="HTTP state/events/control address")
    p.add_argument("--screw-listen", default="127.0.0.1:7701", help="screw-link TCP address")
    p.add_argument("--stream-listen", default="127.0.0.1:7702", help="observation stream TCP address")
    p.add_argument("--config", default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("plan", help="plan tools")
    plan_sub = p.add_subparsers(dest="plan_command", required=True)
    pv = plan_sub.add_parser("validate", help="validate a plan file")
    pv.add_argument("path", help="plan JSON path or 'builtin'")
    pv.set_defaults(func=cmd_plan_validate)

    p = sub.add_parser("report", help="report tools")
    report_sub = p.add_subparsers(dest="report_command", required=True)
    rr = report_sub.add_parser("render", help="render an operation report")
    rr.add_argument("path", help="report JSON path")
    rr.add_argument("--format", choices=("json", "md"), default="md")
    rr.add_argument("--out", default=None)
    rr.add_argument("--figures", default=None, help="also render charts (PNG) into this directory")
    rr.add_argument("--plan", default=None, help="plan for stage names (default: builtin when it matches)")
    rr.set_defaults(func=cmd_report_render)

    p = sub.add_parser("angle", help="angle estimator tools")
    angle_sub = p.add_subparsers(dest="angle_command", required=True)
    ac = angle_sub.add_parser("calibrate", help="calibrate a reference (0 degree) pose from a PGM image")
    ac.add_argument("--ref", required=True, help="binary PGM (P5) of the reference pose")
    ac.add_argument("--out", required=True, help="reference descriptor JSON output")
    ac.add_argument("--threshold", type=float, default=0.5)
    ac.set_defaults(func=cmd_angle_calibrate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ReplayFormatError, InvariantViolation,
            AmbiguousOrientation, EmptyMask, json.JSONDecodeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
