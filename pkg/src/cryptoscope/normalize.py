"""Unified TLS Model and the mapping-driven normalizer.

Each technology ships a declarative ``.map`` file listing rules of the form
(native directive, transform, UTM field). ``normalize`` applies them in file
order, later rules winning, and records a ``Provenance`` entry for every
field it populates. Nothing here knows about a particular server product;
adding a directive only needs a new rule.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

from .crypto import CipherToken, tokenize_cipher_string
from .parsers.base import DirectiveValue, IntermediateConfig, SourceLoc

logger = logging.getLogger(__name__)

UTM_VERSION = "1"
PROTOCOL_ORDER = ("SSLv3", "TLSv1.0", "TLSv1.1", "TLSv1.2", "TLSv1.3")
CLIENT_AUTH = ("none", "optional", "required")
SESSION_CACHE = ("unset", "off", "builtin", "shared")


# -- model -------------------------------------------------------------------


@dataclass
class Endpoint:
    port: int | None = None
    hostname: str | None = None
    role: str | None = None


@dataclass
class Ciphers:
    suite_tokens: list[CipherToken] = field(default_factory=list)
    prefer_server_order: bool | None = None
    ecdh_curves: list[str] = field(default_factory=list)


@dataclass
class Certificates:
    cert_path: str | None = None
    key_path: str | None = None
    ocsp_stapling: bool | None = None
    dhparam_path: str | None = None
    engine: str | None = None


@dataclass
class Trust:
    ca_paths: list[str] = field(default_factory=list)
    crl_paths: list[str] = field(default_factory=list)


@dataclass
class Verification:
    client_auth: str | None = None
    verify_depth: int | None = None
    strict_sni: bool | None = None


@dataclass
class Session:
    cache: str = "unset"
    timeout_seconds: int | None = None
    tickets: bool | None = None
    compression: bool | None = None


@dataclass
class SecurityHeaders:
    hsts_present: bool = False
    hsts_max_age: int | None = None
    hsts_subdomains: bool | None = None


@dataclass(frozen=True)
class Provenance:
    native_directive: str
    raw_value: str
    source: SourceLoc
    mapping_rule_id: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "native_directive": self.native_directive,
            "raw_value": self.raw_value,
            "source": self.source.to_dict(),
            "mapping_rule_id": self.mapping_rule_id,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Provenance:
        return cls(d["native_directive"], d["raw_value"], SourceLoc.from_dict(d["source"]), d["mapping_rule_id"])


# section order is the serialization order
SECTIONS: dict[str, type] = {
    "endpoint": Endpoint,
    "protocols": set,
    "ciphers": Ciphers,
    "certificates": Certificates,
    "trust": Trust,
    "verification": Verification,
    "session": Session,
    "security_headers": SecurityHeaders,
}


def utm_fields() -> list[str]:
    """Every assignable dotted field path."""
    out = []
    for name, typ in SECTIONS.items():
        if typ is set:
            out.append(name)
        else:
            out.extend(f"{name}.{f.name}" for f in dataclasses.fields(typ))
    return out


@dataclass
class UnifiedTlsModel:
    context_id: str = ""
    technology: str = ""
    tls_enabled: bool = False
    endpoint: Endpoint = field(default_factory=Endpoint)
    protocols: set[str] | None = None
    ciphers: Ciphers = field(default_factory=Ciphers)
    certificates: Certificates = field(default_factory=Certificates)
    trust: Trust = field(default_factory=Trust)
    verification: Verification = field(default_factory=Verification)
    session: Session = field(default_factory=Session)
    security_headers: SecurityHeaders = field(default_factory=SecurityHeaders)
    provenance: dict[str, Provenance] = field(default_factory=dict)
    findings: list[dict[str, Any]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def get(self, path: str) -> Any:
        section, _, leaf = path.partition(".")
        obj = getattr(self, section)
        return getattr(obj, leaf) if leaf else obj

    def set(self, path: str, value: Any) -> None:
        section, _, leaf = path.partition(".")
        if leaf:
            setattr(getattr(self, section), leaf, value)
        else:
            setattr(self, section, value)

    def is_populated(self, path: str) -> bool:
        return path in self.provenance

    def sections_dict(self) -> dict[str, Any]:
        return {name: _section_to_dict(name, getattr(self, name)) for name in SECTIONS}

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "utm_version": UTM_VERSION,
            "context_id": self.context_id,
            "technology": self.technology,
            "tls_enabled": self.tls_enabled,
        }
        out.update(self.sections_dict())
        out["provenance"] = {k: self.provenance[k].to_dict() for k in sorted(self.provenance)}
        out["findings"] = list(self.findings)
        out["warnings"] = list(self.warnings)
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> UnifiedTlsModel:
        utm = cls(context_id=d["context_id"], technology=d.get("technology", ""), tls_enabled=d.get("tls_enabled", False))
        utm.endpoint = Endpoint(**d["endpoint"])
        utm.protocols = set(d["protocols"]) if d.get("protocols") is not None else None
        c = d["ciphers"]
        utm.ciphers = Ciphers(
            [CipherToken.from_dict(t) for t in c["suite_tokens"]], c["prefer_server_order"], list(c["ecdh_curves"])
        )
        utm.certificates = Certificates(**d["certificates"])
        utm.trust = Trust(**d["trust"])
        utm.verification = Verification(**d["verification"])
        utm.session = Session(**d["session"])
        utm.security_headers = SecurityHeaders(**d["security_headers"])
        utm.provenance = {k: Provenance.from_dict(v) for k, v in d.get("provenance", {}).items()}
        utm.findings = list(d.get("findings", []))
        utm.warnings = list(d.get("warnings", []))
        return utm


def sorted_protocols(protocols) -> list[str]:
    return sorted(protocols, key=lambda p: PROTOCOL_ORDER.index(p) if p in PROTOCOL_ORDER else 99)


def _section_to_dict(name: str, value: Any) -> Any:
    if name == "protocols":
        return None if value is None else sorted_protocols(value)
    out = {}
    for f in dataclasses.fields(value):
        v = getattr(value, f.name)
        if f.name == "suite_tokens":
            v = [t.to_dict() for t in v]
        elif isinstance(v, list):
            v = list(v)
        out[f.name] = v
    return out


# -- transforms ----------------------------------------------------------------


class TransformError(ValueError):
    pass


_TRUE = {"on", "true", "yes", "1", "enable", "enabled"}
_FALSE = {"off", "false", "no", "0", "disable", "disabled"}
_PROTO_ALIASES = {
    "sslv3": "SSLv3",
    "tlsv1": "TLSv1.0",
    "tlsv1.0": "TLSv1.0",
    "tlsv1.1": "TLSv1.1",
    "tlsv1.2": "TLSv1.2",
    "tlsv1.3": "TLSv1.3",
}
# recognised but outside the model's version enum
_PROTO_IGNORED = {"sslv2"}
_DURATION_UNITS = {"ms": 0.001, "s": 1, "m": 60, "h": 3600, "d": 86400, "w": 604800, "M": 2592000, "y": 31536000}


def _strip_quotes(raw: str) -> str:
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    return raw


def t_identity(raw: str, params: dict) -> str:
    return _strip_quotes(raw)


def t_integer(raw: str, params: dict) -> int:
    text = _strip_quotes(raw)
    if not re.fullmatch(r"[+-]?\d+", text):
        raise TransformError(f"not an integer: {raw!r}")
    return int(text)


def t_boolean(raw: str, params: dict) -> bool:
    text = _strip_quotes(raw).lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise TransformError(f"not a boolean: {raw!r}")


def t_duration(raw: str, params: dict) -> int:
    """nginx-style time value (``1d``, ``1h30m``, ``300``) to whole seconds."""
    text = _strip_quotes(raw).replace(" ", "")
    if re.fullmatch(r"\d+", text):
        return int(text)
    parts = re.findall(r"(\d+)(ms|[smhdwMy])", text)
    if not parts or "".join(n + u for n, u in parts) != text:
        raise TransformError(f"not a duration: {raw!r}")
    return int(sum(int(n) * _DURATION_UNITS[u] for n, u in parts))


def t_split_whitespace(raw: str, params: dict) -> list[str]:
    return _strip_quotes(raw).split()


def t_split_colon(raw: str, params: dict) -> list[str]:
    return [p for p in re.split(r"[:\s]+", _strip_quotes(raw)) if p]


def t_split_comma(raw: str, params: dict) -> list[str]:
    return [p.strip() for p in _strip_quotes(raw).split(",") if p.strip()]


def _proto(token: str) -> str | None:
    key = token.lower()
    if key in _PROTO_ALIASES:
        return _PROTO_ALIASES[key]
    if key in _PROTO_IGNORED:
        return None
    raise TransformError(f"unknown protocol version {token!r}")


def t_protocol_set(raw: str, params: dict) -> set[str]:
    out = set()
    for tok in re.split(r"[\s,]+", _strip_quotes(raw)):
        if tok:
            p = _proto(tok)
            if p:
                out.add(p)
    return out


def t_apache_protocol_algebra(raw: str, params: dict) -> set[str]:
    """``all``/``+X``/``-X`` evaluated left to right; a bare keyword resets the set."""
    universe = {"TLSv1.0", "TLSv1.1", "TLSv1.2", "TLSv1.3"}
    if params.get("all_includes_sslv3", False):
        universe.add("SSLv3")
    current: set[str] = set()
    for tok in _strip_quotes(raw).split():
        op = tok[0] if tok[0] in "+-" else ""
        name = tok[1:] if op else tok
        if name.lower() == "all":
            target = set(universe)
        else:
            p = _proto(name)
            target = {p} if p else set()
        if op == "+":
            current |= target
        elif op == "-":
            current -= target
        else:
            current = set(target)
    return current


def t_cipher_string(raw: str, params: dict) -> list[CipherToken]:
    return tokenize_cipher_string(_strip_quotes(raw))


def t_hsts_header_parse(raw: str, params: dict) -> dict[str, Any]:
    text = raw.lower()
    idx = text.find("strict-transport-security")
    if idx < 0:
        raise TransformError("not a Strict-Transport-Security header")
    rest = text[idx + len("strict-transport-security") :]
    out: dict[str, Any] = {"hsts_present": True}
    m = re.search(r"max-age\s*=\s*\"?(\d+)", rest)
    if m:
        out["hsts_max_age"] = int(m.group(1))
    out["hsts_subdomains"] = bool(re.search(r"\bincludesubdomains\b", rest))
    return out


def t_enum_map(raw: str, params: dict) -> Any:
    """Map through ``params.map``; a null target means "leave unset" without a finding.

    Unlisted values fall back to ``params.default`` when given, pass through
    unchanged with ``default_passthrough``, and otherwise fail.
    """
    text = _strip_quotes(raw)
    table = {str(k).lower(): v for k, v in params.get("map", {}).items()}
    key = text.split()[0].lower() if text.split() else ""
    if key in table:
        return table[key]
    if "default" in params:
        return params["default"]
    if params.get("default_passthrough"):
        return text
    raise TransformError(f"unexpected value {raw!r}; expected one of {sorted(table)}")


def t_session_cache(raw: str, params: dict) -> str:
    kinds = set()
    for tok in _strip_quotes(raw).split():
        low = tok.lower()
        if low in ("off", "none", "nonenotnull"):
            kinds.add("off")
        elif low.startswith("builtin"):
            kinds.add("builtin")
        elif low.startswith(("shared:", "shmcb", "shm:", "dbm:", "dc:", "memcache:", "redis:")):
            kinds.add("shared")
        else:
            raise TransformError(f"unknown session cache {tok!r}")
    for k in ("shared", "builtin", "off"):
        if k in kinds:
            return k
    raise TransformError("empty session cache value")


def t_listen_port(raw: str, params: dict) -> int:
    first = _strip_quotes(raw).split()[0] if raw.split() else ""
    if first.startswith("unix:"):
        raise TransformError(f"unix socket has no port: {raw!r}")
    m = re.fullmatch(r"(?:.*:)?(\d+)", first)
    if not m:
        raise TransformError(f"no port in {raw!r}")
    return int(m.group(1))


def t_first_token(raw: str, params: dict) -> str:
    toks = _strip_quotes(raw).split()
    if not toks:
        raise TransformError("empty value")
    tok = toks[0]
    if params.get("strip_port"):
        tok = re.sub(r":\d+$", "", tok)
    return tok


def t_constant(raw: str, params: dict) -> Any:
    return params["value"]


TRANSFORMS: dict[str, Callable[[str, dict], Any]] = {
    "identity": t_identity,
    "integer": t_integer,
    "boolean": t_boolean,
    "duration": t_duration,
    "split_whitespace": t_split_whitespace,
    "split_colon": t_split_colon,
    "split_comma": t_split_comma,
    "protocol_set": t_protocol_set,
    "apache_protocol_algebra": t_apache_protocol_algebra,
    "cipher_string": t_cipher_string,
    "hsts_header_parse": t_hsts_header_parse,
    "enum_map": t_enum_map,
    "session_cache": t_session_cache,
    "listen_port": t_listen_port,
    "first_token": t_first_token,
    "constant": t_constant,
}

# transforms that fill several leaves of one section at once
SECTION_TRANSFORMS = {"hsts_header_parse"}


# -- mapping specs -------------------------------------------------------------


class MappingError(ValueError):
    pass


@dataclass(frozen=True)
class MappingRule:
    rule_id: str
    native_directive: str
    transform: str
    utm_field: str
    params: dict = field(default_factory=dict, hash=False, compare=False)


@dataclass(frozen=True)
class MappingSpec:
    technology: str
    rules: tuple[MappingRule, ...] = ()
    # allowlisted directives that identify a context but have no UTM field
    ignore: frozenset[str] = frozenset()

    def rules_for(self, directive: str) -> list[MappingRule]:
        return [r for r in self.rules if r.native_directive == directive]


def mapping_from_dict(data: dict, origin: str = "<mapping>") -> MappingSpec:
    if not isinstance(data, dict) or "technology" not in data:
        raise MappingError(f"{origin}: mapping needs a 'technology' key")
    valid = set(utm_fields())
    seen: set[str] = set()
    rules = []
    for i, r in enumerate(data.get("rules") or []):
        missing = [k for k in ("rule_id", "native_directive", "transform", "utm_field") if k not in r]
        if missing:
            raise MappingError(f"{origin}: rule #{i} is missing {', '.join(missing)}")
        rid = r["rule_id"]
        if rid in seen:
            raise MappingError(f"{origin}: duplicate rule_id {rid!r}")
        seen.add(rid)
        if r["transform"] not in TRANSFORMS:
            raise MappingError(f"{origin}: rule {rid!r} has unknown transform {r['transform']!r}")
        target = r["utm_field"]
        ok = target in SECTIONS if r["transform"] in SECTION_TRANSFORMS else target in valid
        if not ok:
            raise MappingError(
                f"{origin}: rule {rid!r} targets unknown UTM field {target!r}; valid fields: {', '.join(sorted(valid))}"
            )
        rules.append(MappingRule(rid, r["native_directive"], r["transform"], target, dict(r.get("params") or {})))
    return MappingSpec(data["technology"], tuple(rules), frozenset(data.get("ignore") or ()))


def load_mapping(path: str | os.PathLike) -> MappingSpec:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MappingError(f"{p}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    return mapping_from_dict(data, str(p))


def default_mappings_dir() -> Path:
    return Path(str(resources.files("cryptoscope").joinpath("mappings")))


def load_mappings(directory: str | os.PathLike | None = None) -> dict[str, MappingSpec]:
    d = Path(directory) if directory else default_mappings_dir()
    specs = {}
    for p in sorted(d.glob("*.map")):
        spec = load_mapping(p)
        specs[spec.technology] = spec
    return specs


# -- normalization -------------------------------------------------------------


def _apply(utm: UnifiedTlsModel, rule: MappingRule, name: str, dv: DirectiveValue) -> None:
    try:
        value = TRANSFORMS[rule.transform](dv.value, rule.params)
    except (TransformError, KeyError, IndexError) as exc:
        utm.findings.append(
            {
                "code": "transform-failed",
                "rule_id": rule.rule_id,
                "native_directive": name,
                "raw_value": dv.value,
                "source": dv.source.to_dict(),
                "message": str(exc),
            }
        )
        return
    prov = Provenance(name, dv.value, dv.source, rule.rule_id)
    if rule.transform in SECTION_TRANSFORMS:
        section = getattr(utm, rule.utm_field)
        for leaf, v in value.items():
            setattr(section, leaf, v)
            utm.provenance[f"{rule.utm_field}.{leaf}"] = prov
        return
    if value is None:
        return
    utm.set(rule.utm_field, value)
    utm.provenance[rule.utm_field] = prov


def normalize(ic: IntermediateConfig, spec: MappingSpec) -> UnifiedTlsModel:
    if ic.technology != spec.technology:
        raise ValueError(f"mapping is for {spec.technology}, context is {ic.technology}")
    utm = UnifiedTlsModel(context_id=ic.context_id, technology=ic.technology, tls_enabled=ic.tls_enabled)
    utm.warnings.extend(ic.warnings)
    mapped = set()
    for rule in spec.rules:
        dv = ic.directives.get(rule.native_directive)
        if dv is None:
            continue
        mapped.add(rule.native_directive)
        _apply(utm, rule, rule.native_directive, dv)
    for name in sorted(ic.directives):
        if name not in mapped and name not in spec.ignore:
            utm.warnings.append(f"unmapped directive '{name}'")
    return utm


def normalize_endpoints(ic: IntermediateConfig, spec: MappingSpec) -> list[UnifiedTlsModel]:
    """One UTM per TLS listen endpoint; all non-endpoint fields are shared."""
    base = normalize(ic, spec)
    if len(ic.endpoints) <= 1:
        return [base]
    port_rules = [r for r in spec.rules if r.utm_field == "endpoint.port"]
    out = []
    for ep in ic.endpoints:
        utm = copy.deepcopy(base)
        utm.provenance.pop("endpoint.port", None)
        utm.endpoint.port = None
        utm.findings = [f for f in utm.findings if f.get("rule_id") not in {r.rule_id for r in port_rules}]
        for rule in port_rules:
            _apply(utm, rule, rule.native_directive, ep)
        out.append(utm)
    return out


# -- validation ----------------------------------------------------------------


def validate_utm(utm: UnifiedTlsModel) -> list[dict[str, Any]]:
    """Structural consistency findings. Never mutates ``utm``."""
    out: list[dict[str, Any]] = []

    def add(code: str, fld: str, message: str) -> None:
        item: dict[str, Any] = {"code": code, "field": fld, "message": message}
        if fld in utm.provenance:
            item["provenance"] = utm.provenance[fld].to_dict()
        out.append(item)

    certs = utm.certificates
    if certs.key_path is not None and certs.cert_path is None:
        add("orphan-key", "certificates.key_path", "private key configured without a certificate")
    if certs.cert_path is not None and certs.key_path is None:
        add("orphan-cert", "certificates.cert_path", "certificate configured without a private key")
    port = utm.endpoint.port
    if port is not None and not 1 <= port <= 65535:
        add("invalid-port", "endpoint.port", f"port {port} outside 1-65535")
    if utm.tls_enabled and utm.protocols is not None and not utm.protocols:
        add("empty-protocols", "protocols", "TLS context enables no protocol version")
    depth = utm.verification.verify_depth
    if depth is not None and depth < 0:
        add("invalid-verify-depth", "verification.verify_depth", f"negative verify depth {depth}")
    if utm.verification.client_auth not in (None,) + CLIENT_AUTH:
        add("invalid-client-auth", "verification.client_auth", f"unknown client auth {utm.verification.client_auth!r}")
    timeout = utm.session.timeout_seconds
    if timeout is not None and timeout < 0:
        add("invalid-timeout", "session.timeout_seconds", f"negative session timeout {timeout}")
    if utm.session.cache not in SESSION_CACHE:
        add("invalid-session-cache", "session.cache", f"unknown cache kind {utm.session.cache!r}")
    if utm.security_headers.hsts_present and utm.security_headers.hsts_max_age is None:
        add("hsts-without-max-age", "security_headers.hsts_max_age", "HSTS header lacks max-age")
    if utm.protocols:
        bad = [p for p in utm.protocols if p not in PROTOCOL_ORDER]
        if bad:
            add("invalid-protocol", "protocols", f"unknown protocol versions {sorted(bad)}")
    return out
