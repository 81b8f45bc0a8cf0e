"""Corpus pipeline: ingest -> parse -> normalize -> classify -> evaluate.

Per-file work is a pure function of the corpus entry and the mapping
directory, so it can fan out over a process pool; results are merged in
corpus order, which keeps outputs independent of the worker count.
"""

from __future__ import annotations

import datetime as dt
import functools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import SCHEMA_VERSION, crypto
from .analytics import ContextRecord
from .ingest import CorpusEntry, classify_repo_status, dedupe, default_reference_date, load_corpus
from .normalize import UnifiedTlsModel, load_mappings, normalize, normalize_endpoints, validate_utm
from .parsers import FileTooLarge, ParseError, extract_contexts
from .policy import Policy, PolicyReport, evaluate, load_policy, quantum_readiness, shipped_policy_paths

logger = logging.getLogger(__name__)

EMIT_KINDS = ("utm", "intermediate", "findings", "metrics", "csv")
FAIL_ON = ("never", "any_fail", "regression")


@dataclass
class RunConfig:
    root: str | None = None
    manifest: str | None = None
    mappings_dir: str | None = None
    policies: list[str] = field(default_factory=list)
    emit: set[str] = field(default_factory=set)
    output_dir: str = "."
    reference_date: dt.date | None = None
    confidence_threshold: float = 0.5
    fail_on: str = "never"
    jobs: int = 1
    inventory: str | None = None
    baseline: str | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError(f"confidence threshold {self.confidence_threshold} outside [0, 1]")
        if self.fail_on not in FAIL_ON:
            raise ValueError(f"fail_on must be one of {FAIL_ON}")
        unknown = set(self.emit) - set(EMIT_KINDS)
        if unknown:
            raise ValueError(f"unknown emit kind(s): {sorted(unknown)}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def policy_paths(self) -> list[str]:
        if not self.policies:
            return [str(p) for p in shipped_policy_paths()]
        return [resolve_policy(p) for p in self.policies]


def resolve_policy(name: str) -> str:
    """A policy path as given, or a shipped policy by file name or stem."""
    if Path(name).exists():
        return name
    shipped = {p.name: p for p in shipped_policy_paths()} | {p.stem: p for p in shipped_policy_paths()}
    return str(shipped.get(name, name))


class InputError(Exception):
    """Fatal input problem; the CLI maps it to exit status 1."""


# -- per-file stage --------------------------------------------------------------


@functools.lru_cache(maxsize=8)
def _mappings(mappings_dir: str | None):
    return load_mappings(mappings_dir)


def classify_utm(utm: UnifiedTlsModel) -> dict[str, Any]:
    """Per-context classification bundle stored on inventory records."""
    certs = utm.certificates
    hsm = crypto.detect_hsm(utm)
    return {
        "suite_tokens": [c.to_dict() for c in crypto.classify_tokens(utm.ciphers.suite_tokens)],
        "context_kex": crypto.classify_context_kex(utm),
        "curves": {c: crypto.classify_curve(c) for c in utm.ciphers.ecdh_curves},
        "legacy_presets": sorted(crypto.detect_legacy_presets(utm.ciphers.suite_tokens)),
        "key_ref": hsm,
        "hsm_backed": crypto.is_hsm(hsm),
        "cert_origin": crypto.classify_cert_origin(certs.cert_path, utm) if certs.cert_path else None,
        "cert_chain": crypto.classify_cert_chain(certs.cert_path) if certs.cert_path else None,
        "cert_storage": crypto.classify_storage(certs.cert_path) if certs.cert_path else None,
        "key_storage": crypto.classify_storage(certs.key_path) if certs.key_path else None,
        "hostname": crypto.classify_hostname(utm.endpoint.hostname),
    }


def process_entry(entry: CorpusEntry, mappings_dir: str | None) -> dict[str, Any]:
    """Parse and normalize one file. Never raises for bad input; problems become warnings."""
    out: dict[str, Any] = {"file": entry.path, "contexts": [], "warnings": []}
    try:
        ics = extract_contexts(entry, entry.root)
    except (ParseError, FileTooLarge, UnicodeError, ValueError) as exc:
        out["warnings"].append(f"{entry.path}: {exc}")
        return out
    except RecursionError:
        out["warnings"].append(f"{entry.path}: nesting too deep")
        return out
    spec = _mappings(mappings_dir).get(entry.technology_hint)
    if spec is None:
        out["warnings"].append(f"{entry.path}: no mapping for technology {entry.technology_hint!r}")
        return out
    for ic in ics:
        utm = normalize(ic, spec)
        per_endpoint = normalize_endpoints(ic, spec)
        out["contexts"].append(
            {
                "intermediate": ic.to_dict(),
                "utm": utm.to_dict(),
                "endpoint_utms": [u.to_dict() for u in per_endpoint],
                "ordinal": ic.ordinal,
                "validation": validate_utm(utm),
            }
        )
    return out


def _run_entries(entries: list[CorpusEntry], mappings_dir: str | None, jobs: int) -> list[dict[str, Any]]:
    if jobs <= 1 or len(entries) <= 1:
        return [process_entry(e, mappings_dir) for e in entries]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # map preserves input order, so the merge is deterministic
        return list(pool.map(process_entry, entries, [mappings_dir] * len(entries), chunksize=4))


# -- inventory -------------------------------------------------------------------


def load_policies(run: RunConfig) -> list[Policy]:
    policies = [load_policy(p) for p in run.policy_paths()]
    ids = [p.id for p in policies]
    if len(set(ids)) != len(ids):
        raise InputError(f"duplicate policy ids: {sorted(i for i in set(ids) if ids.count(i) > 1)}")
    return policies


def build_inventory(run: RunConfig, policies: list[Policy] | None = None) -> dict[str, Any]:
    """Run ingest through classification; returns the inventory document."""
    if run.root is None:
        raise InputError("--root is required")
    warnings: list[str] = []
    try:
        entries = load_corpus(run.root, run.manifest, None, warnings)
    except OSError as exc:
        raise InputError(str(exc)) from exc
    ref = run.reference_date or default_reference_date(entries)
    for e in entries:
        if e.repo_meta is not None and ref is not None:
            try:
                e.repo_meta.status = classify_repo_status(e.repo_meta, ref)
            except ValueError as exc:
                warnings.append(f"{e.path}: {exc}")
    n_candidates = len(entries)
    unique = dedupe(entries)
    kept = [e for e in unique if e.confidence >= run.confidence_threshold]
    for e in unique:
        if e.confidence < run.confidence_threshold:
            warnings.append(f"{e.path}: confidence {e.confidence:.2f} below threshold, skipped")
    if not kept:
        raise InputError(
            f"{n_candidates} candidate files, {len(unique)} after dedupe, 0 above confidence threshold"
        )

    # validate the mapping directory once, up front, so a bad map is a fatal error
    _mappings(run.mappings_dir)
    results = _run_entries(kept, run.mappings_dir, run.jobs)
    policies = policies if policies is not None else load_policies(run)

    records = []
    n_parsed = 0
    for entry, res in zip(kept, results):
        warnings.extend(res["warnings"])
        if res["contexts"] or not res["warnings"]:
            n_parsed += 1
        for ctx in res["contexts"]:
            utm = UnifiedTlsModel.from_dict(ctx["utm"])
            rec: dict[str, Any] = {
                "context_id": utm.context_id,
                "file": entry.path,
                "ordinal": ctx["ordinal"],
                "technology": utm.technology,
                "tls_enabled": utm.tls_enabled,
                "repo": entry.repo_meta.to_dict() if entry.repo_meta else None,
                "annotations": dict(entry.annotations),
                "endpoint_ports": sorted({u["endpoint"]["port"] for u in ctx["endpoint_utms"] if u["endpoint"]["port"] is not None}),
                "utm": ctx["utm"],
                "classifications": None,
                "quantum": None,
                "policy_verdicts": {},
                "validation": ctx["validation"],
                "warnings": list(utm.warnings),
            }
            if utm.tls_enabled:
                rec["classifications"] = classify_utm(utm)
                q = quantum_readiness(utm)
                rec["quantum"] = {"risk_level": q["risk_level"], "kex_category": q["kex_category"]}
                rec["policy_verdicts"] = {p.id: evaluate(utm, p).verdict for p in policies}
            rec["_intermediate"] = ctx["intermediate"]
            rec["_endpoint_utms"] = ctx["endpoint_utms"]
            records.append(rec)
    if n_parsed == 0:
        raise InputError(f"{n_candidates} candidate files, {len(kept)} above confidence threshold, 0 parsed")

    records.sort(key=lambda r: (r["file"], r["ordinal"], r["context_id"]))
    return {
        "schema_version": SCHEMA_VERSION,
        "reference_date": ref.isoformat() if ref else None,
        "summary": {
            "candidate_files": n_candidates,
            "unique_files": len(unique),
            "files_above_threshold": len(kept),
            "files_parsed": n_parsed,
            "contexts": len(records),
            "tls_contexts": sum(r["tls_enabled"] for r in records),
        },
        "policies": sorted(p.id for p in policies),
        "records": records,
        "warnings": warnings,
    }


def strip_private(inventory: dict[str, Any]) -> dict[str, Any]:
    """Inventory without the side-channel payloads used for --emit outputs."""
    out = dict(inventory)
    out["records"] = [{k: v for k, v in r.items() if not k.startswith("_")} for r in inventory["records"]]
    return out


def records_from_inventory(inventory: dict[str, Any]) -> list[tuple[dict[str, Any], UnifiedTlsModel]]:
    return [(r, UnifiedTlsModel.from_dict(r["utm"])) for r in inventory["records"]]


def context_records(inventory: dict[str, Any]) -> list[ContextRecord]:
    out = []
    for r, utm in records_from_inventory(inventory):
        status = (r.get("repo") or {}).get("status")
        out.append(ContextRecord(r["context_id"], r["file"], r["ordinal"], r["tls_enabled"], utm, status))
    return out


def assess_inventory(inventory: dict[str, Any], policies: list[Policy]) -> dict[str, Any]:
    reports: list[PolicyReport] = []
    quantum = []
    for r, utm in records_from_inventory(inventory):
        if not utm.tls_enabled:
            continue
        for p in policies:
            reports.append(evaluate(utm, p))
        quantum.append({"context_id": utm.context_id, **quantum_readiness(utm)})
    reports.sort(key=lambda rep: (rep.context_id, rep.policy_id))
    summary = {
        "reports": len(reports),
        "pass": sum(r.verdict == "pass" for r in reports),
        "fail": sum(r.verdict == "fail" for r in reports),
        "warn_findings": sum(f["severity"] == "warn" for r in reports for f in r.findings),
        "fail_findings": sum(f["severity"] == "fail" for r in reports for f in r.findings),
        "risk_levels": {
            k: sum(q["risk_level"] == k for q in quantum) for k in ("resistant", "vulnerable_fs", "vulnerable_no_fs")
        },
    }
    return {
        "schema_version": SCHEMA_VERSION,
        "policies": sorted(p.id for p in policies),
        "summary": summary,
        "reports": [r.to_dict() for r in reports],
        "quantum": quantum,
    }


_TIER = {"vulnerable_no_fs": 0, "vulnerable_fs": 1}


def prioritize(inventory: dict[str, Any]) -> list[dict[str, Any]]:
    """Ranked migration targets; quantum-resistant contexts are left out."""
    rows = []
    for r in inventory["records"]:
        if not r["tls_enabled"] or r["quantum"] is None:
            continue
        risk = r["quantum"]["risk_level"]
        if risk not in _TIER:
            continue
        hsm = bool(r["classifications"]["hsm_backed"])
        ports = r.get("endpoint_ports") or []
        public = 443 in ports
        why = [f"{risk} ({r['quantum']['kex_category']} key exchange)"]
        why.append("HSM-backed key, rotation constrained" if hsm else "filesystem key")
        why.append("port 443 exposed" if public else f"ports {ports or 'unknown'}")
        sensitivity = (r.get("annotations") or {}).get("sensitivity")
        if sensitivity:
            why.append(f"sensitivity {sensitivity}")
        rows.append(
            {
                "context_id": r["context_id"],
                "file": r["file"],
                "risk_level": risk,
                "kex_category": r["quantum"]["kex_category"],
                "hsm_backed": hsm,
                "ports": ports,
                "sensitivity": sensitivity,
                "rationale": "; ".join(why),
                "_key": (_TIER[risk], hsm, not public, r["context_id"]),
            }
        )
    rows.sort(key=lambda x: x["_key"])
    for i, row in enumerate(rows, 1):
        del row["_key"]
        row["rank"] = i
    return rows


def reports_from_inventory(inventory: dict[str, Any], policies: list[Policy]) -> list[PolicyReport]:
    return [
        evaluate(utm, p) for _, utm in records_from_inventory(inventory) if utm.tls_enabled for p in policies
    ]


def output_path(run: RunConfig, name: str) -> Path:
    return Path(run.output_dir) / name


def ensure_output_dir(run: RunConfig) -> None:
    try:
        os.makedirs(run.output_dir, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {run.output_dir}: {exc}") from exc
    if not os.access(run.output_dir, os.W_OK):
        raise InputError(f"output directory {run.output_dir} is not writable")
