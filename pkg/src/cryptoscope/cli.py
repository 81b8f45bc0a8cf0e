"""Command-line entry point.

Exit status: 0 clean, 1 input or infrastructure error, 2 policy gate.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import io
import json
import logging
import os
import sys
from typing import Any

from . import SCHEMA_VERSION, __version__
from ._io import write_atomic, write_json
from .analytics import compute_metrics, distributions_for_csv, render_text
from .ingest import DEFAULT_CONFIDENCE_THRESHOLD, ManifestError
from .normalize import MappingError
from .pipeline import (
    EMIT_KINDS,
    FAIL_ON,
    InputError,
    RunConfig,
    assess_inventory,
    build_inventory,
    context_records,
    ensure_output_dir,
    load_policies,
    output_path,
    prioritize,
    reports_from_inventory,
    strip_private,
)
from .policy import PolicyError, diff_reports

logger = logging.getLogger("cryptoscope")

EXIT_OK, EXIT_INPUT, EXIT_GATE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; keep 2 for the policy gate
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _date(raw: str) -> dt.date:
    try:
        return dt.date.fromisoformat(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {raw!r}")


def _threshold(raw: str) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {raw!r}")
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("threshold must be within [0, 1]")
    return v


def _emit(raw: str) -> set[str]:
    kinds = {k.strip() for k in raw.split(",") if k.strip()}
    bad = kinds - set(EMIT_KINDS)
    if bad:
        raise argparse.ArgumentTypeError(f"unknown emit kind(s) {sorted(bad)}; choose from {', '.join(EMIT_KINDS)}")
    return kinds


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--root", help="corpus root directory")
    common.add_argument("--manifest", help="repository metadata manifest (CSV or JSONL)")
    common.add_argument("--mappings", help="mapping directory (default: $CRYPTOSCOPE_MAPPINGS or shipped maps)")
    common.add_argument("--policy", action="append", default=[], help="policy file; repeatable (default: all shipped)")
    common.add_argument("--emit", type=_emit, action="append", default=[], help=f"extra outputs: {','.join(EMIT_KINDS)}")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--reference-date", type=_date, help="date used for dormancy (default: latest push in manifest)")
    common.add_argument("--confidence-threshold", type=_threshold, default=DEFAULT_CONFIDENCE_THRESHOLD)
    common.add_argument("--fail-on", choices=FAIL_ON)
    common.add_argument("--jobs", type=int, default=1, help="worker processes for per-file stages")
    common.add_argument("--inventory", help="reuse an existing inventory.json instead of re-running discover")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="cryptoscope", description="TLS configuration posture extraction and quantum-readiness audit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("discover", parents=[common], help="build the cryptographic inventory")
    sub.add_parser("assess", parents=[common], help="evaluate policies and quantum readiness")
    sub.add_parser("prioritize", parents=[common], help="rank migration targets")
    v = sub.add_parser("verify", parents=[common], help="diff against a baseline inventory")
    v.add_argument("--baseline", required=True, help="baseline inventory.json")
    sub.add_parser("stats", parents=[common], help="corpus metrics")
    return p


def run_config(args: argparse.Namespace) -> RunConfig:
    default_fail = "regression" if args.command == "verify" else "never"
    if args.jobs < 1:
        raise InputError("--jobs must be >= 1")
    return RunConfig(
        root=args.root,
        manifest=args.manifest,
        mappings_dir=args.mappings or os.environ.get("CRYPTOSCOPE_MAPPINGS") or None,
        policies=list(args.policy),
        emit=set().union(*args.emit) if args.emit else set(),
        output_dir=args.out,
        reference_date=args.reference_date,
        confidence_threshold=args.confidence_threshold,
        fail_on=args.fail_on or default_fail,
        jobs=args.jobs,
        inventory=args.inventory,
        baseline=getattr(args, "baseline", None),
    )


def _read_json(path: str) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not isinstance(doc, dict) or "records" not in doc:
        raise InputError(f"{path} is not an inventory file")
    return doc


def _inventory(run: RunConfig, policies) -> dict[str, Any]:
    if run.inventory:
        return _read_json(run.inventory)
    return build_inventory(run, policies)


def _report_warnings(inv: dict[str, Any]) -> None:
    for w in inv.get("warnings", []):
        logger.warning("%s", w)


def _write_emits(run: RunConfig, inv: dict[str, Any]) -> None:
    if "intermediate" in run.emit:
        items = [r["_intermediate"] for r in inv["records"] if "_intermediate" in r]
        write_json(output_path(run, "intermediate.json"), {"schema_version": SCHEMA_VERSION, "contexts": items})
    if "utm" in run.emit:
        items = [u for r in inv["records"] for u in r.get("_endpoint_utms", [r["utm"]])]
        write_json(output_path(run, "utm.json"), {"schema_version": SCHEMA_VERSION, "utms": items})


def cmd_discover(run: RunConfig) -> int:
    ensure_output_dir(run)
    policies = load_policies(run)
    inv = build_inventory(run, policies)
    _report_warnings(inv)
    write_json(output_path(run, "inventory.json"), strip_private(inv))
    _write_emits(run, inv)
    s = inv["summary"]
    print(f"{s['files_parsed']} files parsed, {s['contexts']} contexts ({s['tls_contexts']} TLS), "
          f"{len(inv['warnings'])} warnings")
    return EXIT_OK


def cmd_assess(run: RunConfig) -> int:
    ensure_output_dir(run)
    policies = load_policies(run)
    inv = _inventory(run, policies)
    _report_warnings(inv)
    findings = assess_inventory(inv, policies)
    write_json(output_path(run, "findings.json"), findings)
    s = findings["summary"]
    print(f"{s['reports']} policy reports: {s['pass']} pass, {s['fail']} fail")
    if run.fail_on == "any_fail" and s["fail"]:
        return EXIT_GATE
    return EXIT_OK


def cmd_prioritize(run: RunConfig) -> int:
    ensure_output_dir(run)
    inv = _inventory(run, load_policies(run))
    rows = prioritize(inv)
    write_json(output_path(run, "priorities.json"), {"schema_version": SCHEMA_VERSION, "targets": rows})
    for row in rows:
        print(f"{row['rank']:>4}  {row['context_id']}  {row['rationale']}")
    return EXIT_OK


def cmd_verify(run: RunConfig) -> int:
    ensure_output_dir(run)
    if not run.baseline:
        raise InputError("--baseline is required")
    policies = load_policies(run)
    baseline = _read_json(run.baseline)
    current = _inventory(run, policies)
    _report_warnings(current)
    diff = diff_reports(reports_from_inventory(baseline, policies), reports_from_inventory(current, policies))
    write_json(output_path(run, "verify.json"), {"schema_version": SCHEMA_VERSION, **diff})
    print(f"{diff['overall']}: " + ", ".join(f"{k} {v}" for k, v in diff["summary"].items()))
    if diff["overall"] == "regressed" and run.fail_on in ("regression", "any_fail"):
        return EXIT_GATE
    return EXIT_OK


def _csv_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["category", "value"])
    for k, v in rows:
        w.writerow([k, "" if v is None else repr(v) if isinstance(v, float) else v])
    return buf.getvalue()


def cmd_stats(run: RunConfig) -> int:
    ensure_output_dir(run)
    inv = _inventory(run, load_policies(run))
    _report_warnings(inv)
    metrics = compute_metrics(context_records(inv))
    write_json(output_path(run, "metrics.json"), metrics)
    text = render_text(metrics)
    write_atomic(output_path(run, "metrics.txt"), text)
    if "csv" in run.emit:
        csv_dir = output_path(run, "csv")
        csv_dir.mkdir(parents=True, exist_ok=True)
        for name, rows in distributions_for_csv(metrics).items():
            write_atomic(csv_dir / f"{name}.csv", _csv_text(rows))
    print(text, end="")
    return EXIT_OK


COMMANDS = {
    "discover": cmd_discover,
    "assess": cmd_assess,
    "prioritize": cmd_prioritize,
    "verify": cmd_verify,
    "stats": cmd_stats,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # --help / --version exit 0, usage errors exit 1
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        run = run_config(args)
        return COMMANDS[args.command](run)
    except (InputError, ManifestError, MappingError, PolicyError, ValueError, OSError) as exc:
        print(f"cryptoscope: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
