"""Declarative policy evaluation, quantum-readiness risk, and report diffs."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable

import yaml

from . import crypto
from .normalize import SECTIONS, UnifiedTlsModel, sorted_protocols, utm_fields

logger = logging.getLogger(__name__)

REQUIREMENTS = (
    "must_include",
    "must_exclude",
    "must_equal",
    "must_be_set",
    "must_be_unset",
    "min_value",
    "all_tokens_satisfy",
)
SEVERITIES = ("fail", "warn")
RISK_LEVELS = ("resistant", "vulnerable_fs", "vulnerable_no_fs")


class PolicyError(ValueError):
    pass


# token predicates usable with all_tokens_satisfy; each gets a suite classification
def _no_weak(c: crypto.CipherClassification) -> bool:
    return not c.weak_flags


def _aead_only(c: crypto.CipherClassification) -> bool:
    return c.aead is True


def _forward_secret(c: crypto.CipherClassification) -> bool:
    return c.kex_category in ("ecdhe_dhe", "tls13_suite", "pqc_hybrid")


def _grover_safe(c: crypto.CipherClassification) -> bool:
    if c.components is None:
        return False
    bits = crypto.cipher_bits(c.components.cipher, c.components.kex)
    return bits is not None and bits > 128


def _known_suite(c: crypto.CipherClassification) -> bool:
    return c.components is not None


PREDICATES: dict[str, Callable[[crypto.CipherClassification], bool]] = {
    "no_weak": _no_weak,
    "aead_only": _aead_only,
    "forward_secret": _forward_secret,
    "grover_safe": _grover_safe,
    "known_suite": _known_suite,
}


@dataclass(frozen=True)
class PolicyRule:
    id: str
    utm_field: str
    requirement: str
    parameter: Any = None
    severity: str = "fail"
    description: str = ""


@dataclass(frozen=True)
class Policy:
    id: str
    name: str
    rules: tuple[PolicyRule, ...] = ()
    description: str = ""


def _check_parameter(rule_id: str, req: str, param: Any, origin: str) -> None:
    def bad(msg: str) -> PolicyError:
        return PolicyError(f"{origin}: rule {rule_id!r}: {msg}")

    if req in ("must_include", "must_exclude"):
        if isinstance(param, dict):
            if set(param) != {"any_of"} or not isinstance(param["any_of"], list) or not param["any_of"]:
                raise bad(f"{req} mapping parameter must be {{any_of: [..]}}")
            if req == "must_exclude":
                raise bad("must_exclude takes a list")
        elif not isinstance(param, list) or not param:
            raise bad(f"{req} needs a non-empty list parameter")
    elif req == "must_equal":
        if param is None or isinstance(param, (list, dict)):
            raise bad("must_equal needs a scalar parameter")
    elif req in ("must_be_set", "must_be_unset"):
        if param is not None:
            raise bad(f"{req} takes no parameter")
    elif req == "min_value":
        if isinstance(param, bool) or not isinstance(param, (int, float)):
            raise bad("min_value needs a numeric parameter")
    elif req == "all_tokens_satisfy":
        if param not in PREDICATES:
            raise bad(f"unknown predicate {param!r}; expected one of {sorted(PREDICATES)}")


def policy_from_dict(data: dict, origin: str = "<policy>") -> Policy:
    if not isinstance(data, dict):
        raise PolicyError(f"{origin}: policy must be a mapping")
    for key in ("id", "name"):
        if not data.get(key):
            raise PolicyError(f"{origin}: missing '{key}'")
    valid = set(utm_fields()) | set(SECTIONS)
    rules = []
    seen: set[str] = set()
    for i, r in enumerate(data.get("rules") or []):
        if not isinstance(r, dict) or "id" not in r:
            raise PolicyError(f"{origin}: rule #{i} has no id")
        rid = str(r["id"])
        if rid in seen:
            raise PolicyError(f"{origin}: duplicate rule id {rid!r}")
        seen.add(rid)
        req = r.get("requirement")
        if req not in REQUIREMENTS:
            raise PolicyError(f"{origin}: rule {rid!r} has unknown requirement {req!r}")
        fld = r.get("utm_field")
        if fld not in valid:
            raise PolicyError(f"{origin}: rule {rid!r} targets unknown UTM field {fld!r}")
        if req == "all_tokens_satisfy" and fld != "ciphers.suite_tokens":
            raise PolicyError(f"{origin}: rule {rid!r}: all_tokens_satisfy applies to ciphers.suite_tokens only")
        sev = r.get("severity", "fail")
        if sev not in SEVERITIES:
            raise PolicyError(f"{origin}: rule {rid!r} has unknown severity {sev!r}")
        param = r.get("parameter")
        _check_parameter(rid, req, param, origin)
        rules.append(PolicyRule(rid, fld, req, param, sev, str(r.get("description", ""))))
    return Policy(str(data["id"]), str(data["name"]), tuple(rules), str(data.get("description", "")))


def load_policy(path: str | os.PathLike) -> Policy:
    p = Path(path)
    try:
        data = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise PolicyError(f"{p}: invalid YAML: {exc}") from None
    return policy_from_dict(data, str(p))


def shipped_policy_paths() -> list[Path]:
    d = Path(str(resources.files("cryptoscope").joinpath("policies")))
    return sorted(d.glob("*.policy"))


# -- evaluation ----------------------------------------------------------------


@dataclass
class PolicyReport:
    context_id: str
    policy_id: str
    verdict: str
    findings: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "context_id": self.context_id,
            "policy_id": self.policy_id,
            "verdict": self.verdict,
            "findings": list(self.findings),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> PolicyReport:
        return cls(d["context_id"], d["policy_id"], d["verdict"], list(d.get("findings", [])))


def _observable(value: Any) -> Any:
    """JSON-friendly view of a field value for reports."""
    if isinstance(value, set):
        return sorted_protocols(value)
    if isinstance(value, list):
        return [v.display() if isinstance(v, crypto.CipherToken) else v for v in value]
    return value


def _items(utm: UnifiedTlsModel, fld: str) -> list[str]:
    value = utm.get(fld)
    if value is None:
        return []
    if fld == "ciphers.suite_tokens":
        return [t.text for t in value if not t.negated]
    if isinstance(value, (set, list)):
        return [str(v) for v in value]
    return [str(value)]


def _lower(xs: Iterable[Any]) -> set[str]:
    return {str(x).lower() for x in xs}


def _eq(a: Any, b: Any) -> bool:
    if isinstance(a, (set, list)):
        # a collection equals a scalar parameter when it holds exactly that element
        return _lower(_observable(a)) == _lower(b if isinstance(b, list) else [b])
    if isinstance(a, str) or isinstance(b, str):
        return str(a).lower() == str(b).lower()
    return a == b


def evaluate(utm: UnifiedTlsModel, policy: Policy) -> PolicyReport:
    findings: list[dict[str, Any]] = []

    for rule in policy.rules:
        populated = utm.is_populated(rule.utm_field) or any(
            k.startswith(rule.utm_field + ".") for k in utm.provenance
        )
        prov = utm.provenance.get(rule.utm_field)
        value = utm.get(rule.utm_field)

        def emit(observed: Any, message: str, p=prov) -> None:
            item: dict[str, Any] = {
                "rule_id": rule.id,
                "severity": rule.severity,
                "utm_field": rule.utm_field,
                "observed": observed,
                "message": message,
            }
            if p is not None:
                item["provenance"] = p.to_dict()
            findings.append(item)

        req, param = rule.requirement, rule.parameter
        if req == "must_be_set":
            if not populated:
                emit("unset", f"{rule.utm_field} must be set")
        elif req == "must_be_unset":
            if populated:
                emit(_observable(value), f"{rule.utm_field} must not be set")
        elif req == "must_include":
            if not populated:
                emit("unset", f"{rule.utm_field} is unset")
                continue
            have = _lower(_items(utm, rule.utm_field))
            if isinstance(param, dict):
                if not have & _lower(param["any_of"]):
                    emit(_observable(value), f"{rule.utm_field} must include one of {param['any_of']}")
            else:
                missing = [p for p in param if str(p).lower() not in have]
                if missing:
                    emit(missing, f"{rule.utm_field} is missing {missing}")
        elif req == "must_exclude":
            if not populated:
                continue
            have = _lower(_items(utm, rule.utm_field))
            present = [p for p in param if str(p).lower() in have]
            if present:
                emit(present, f"{rule.utm_field} must not include {present}")
        elif req == "must_equal":
            if not populated:
                emit("unset", f"{rule.utm_field} is unset")
            elif not _eq(value, param):
                emit(_observable(value), f"{rule.utm_field} must equal {param!r}")
        elif req == "min_value":
            if not populated or value is None:
                emit("unset", f"{rule.utm_field} is unset")
            elif value < param:
                emit(value, f"{rule.utm_field} must be at least {param}")
        elif req == "all_tokens_satisfy":
            pred = PREDICATES[param]
            for c in crypto.active_suites(crypto.classify_tokens(utm.ciphers.suite_tokens)):
                if not pred(c):
                    emit(c.token.text, f"cipher suite {c.token.text} fails {param}")

    verdict = "fail" if any(f["severity"] == "fail" for f in findings) else "pass"
    return PolicyReport(utm.context_id, policy.id, verdict, findings)


# -- quantum readiness -----------------------------------------------------------

_RISK = {
    "pqc_hybrid": "resistant",
    "ecdhe_dhe": "vulnerable_fs",
    "rsa_kex": "vulnerable_no_fs",
    # no observable key exchange: assume the worst case
    "unknown": "vulnerable_no_fs",
}


def quantum_readiness(utm: UnifiedTlsModel) -> dict[str, Any]:
    """Risk level plus one finding per quantum-vulnerable component."""
    category = crypto.classify_context_kex(utm)
    findings: list[dict[str, Any]] = []

    def add(component: str, algorithm: str, threat: str, severity: str, fld: str, detail: str = "") -> None:
        item: dict[str, Any] = {
            "component": component,
            "algorithm": algorithm,
            "threat": threat,
            "severity": severity,
            "utm_field": fld,
        }
        if detail:
            item["detail"] = detail
        if fld in utm.provenance:
            item["provenance"] = utm.provenance[fld].to_dict()
        findings.append(item)

    suites = crypto.active_suites(crypto.classify_tokens(utm.ciphers.suite_tokens))
    for c in suites:
        if c.components is None:
            continue
        if c.kex_category in ("ecdhe_dhe", "rsa_kex"):
            add("kex", c.components.kex, "shor", "fail", "ciphers.suite_tokens", c.token.text)
        bits = crypto.cipher_bits(c.components.cipher, c.components.kex)
        if bits is not None and bits <= 128:
            add("cipher", c.components.cipher, "grover", "warn", "ciphers.suite_tokens", c.token.text)
    for curve in utm.ciphers.ecdh_curves:
        if crypto.classify_curve(curve) in ("classical_named", "auto"):
            add("group", curve, "shor", "fail", "ciphers.ecdh_curves")
    if category == "ecdhe_dhe" and not suites and not utm.ciphers.ecdh_curves:
        add("kex", "ECDHE", "shor", "fail", "protocols", "default ephemeral groups")
    if category == "unknown":
        add("kex", "indeterminate", "shor", "fail", "ciphers.suite_tokens", "kex-indeterminate")
    return {"risk_level": _RISK[category], "kex_category": category, "findings": findings}


# -- diff ----------------------------------------------------------------------

OUTCOMES = ("improved", "regressed", "unchanged", "added", "removed")


def _fail_keys(report: PolicyReport) -> set[tuple[str, str]]:
    return {
        (f["rule_id"], json.dumps(f.get("observed"), sort_keys=True))
        for f in report.findings
        if f["severity"] == "fail"
    }


def _keyed(reports) -> dict[tuple[str, str], PolicyReport]:
    if isinstance(reports, dict):
        return dict(reports)
    return {(r.context_id, r.policy_id): r for r in reports}


def diff_reports(before, after) -> dict[str, Any]:
    """Classify every (context_id, policy_id) key as improved/regressed/unchanged/added/removed."""
    b, a = _keyed(before), _keyed(after)
    entries = []
    for key in sorted(set(b) | set(a)):
        rb, ra = b.get(key), a.get(key)
        entry: dict[str, Any] = {"context_id": key[0], "policy_id": key[1]}
        if rb is None:
            outcome = "added"
        elif ra is None:
            outcome = "removed"
        else:
            fb, fa = _fail_keys(rb), _fail_keys(ra)
            new, gone = fa - fb, fb - fa
            if (rb.verdict == "pass" and ra.verdict == "fail") or new:
                outcome = "regressed"
            elif (rb.verdict == "fail" and ra.verdict == "pass") or gone:
                outcome = "improved"
            else:
                outcome = "unchanged"
            entry["new_fail_findings"] = sorted(r for r, _ in new)
            entry["resolved_fail_findings"] = sorted(r for r, _ in gone)
        entry["before"] = rb.verdict if rb else None
        entry["after"] = ra.verdict if ra else None
        entry["outcome"] = outcome
        entries.append(entry)
    summary = {o: sum(1 for e in entries if e["outcome"] == o) for o in OUTCOMES}
    if summary["regressed"]:
        overall = "regressed"
    elif summary["improved"]:
        overall = "improved"
    else:
        overall = "unchanged"
    return {"overall": overall, "summary": summary, "entries": entries}
