"""Cipher-string, curve, key-reference, certificate-path and hostname classifiers.

All classifiers are pure functions over the shipped lookup tables in
``cryptoscope/data``. Cipher strings are analysed token by token; OpenSSL
presets such as ``HIGH`` are reported as presets and never expanded, since
their meaning drifts between library versions.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Iterable

from ._io import has_interpolation

logger = logging.getLogger(__name__)

KEX_CATEGORIES = ("ecdhe_dhe", "rsa_kex", "pqc_hybrid", "tls13_suite", "unknown")
CONTEXT_KEX_CATEGORIES = ("ecdhe_dhe", "rsa_kex", "pqc_hybrid", "unknown")
VERDICTS = ("vulnerable_no_fs", "vulnerable_fs", "resistant_hybrid", "indeterminate")
WEAK_FAMILIES = ("RC4", "DES", "3DES", "EXPORT", "NULL", "MD5")
CURVE_CATEGORIES = ("classical_named", "pqc_hybrid", "auto", "unknown")
KEY_REF_KINDS = ("filesystem", "pkcs11_uri", "engine_ref", "env_var", "docker_secret", "relative")
CERT_ORIGINS = ("lets_encrypt_acme", "self_signed_indicator", "env_var", "other")
CHAIN_KINDS = ("fullchain_bundle", "leaf_only")
STORAGE_PATTERNS = (
    "docker_secrets",
    "letsencrypt",
    "nginx_dir",
    "ssl_pki",
    "opt_srv",
    "hsm",
    "env_var",
    "relative",
    "other_absolute",
)
HOSTNAME_CATEGORIES = (
    "domain_like",
    "localhost",
    "empty",
    "catch_all",
    "env_var",
    "example_domain",
    "wildcard_only",
    "loopback_ip",
    "other",
)

AEAD_MODES = {"GCM", "CCM", "CCM8", "POLY1305"}
FS_KEX = {"ECDHE", "DHE", "ECDHEPSK", "DHEPSK", "DHE_EXPORT"}
RSA_KEX = {"RSA", "RSAPSK", "RSA_EXPORT"}
DEFAULT_PROTOCOLS = frozenset({"TLSv1.2", "TLSv1.3"})


# -- tables ------------------------------------------------------------------


def _read_tsv(name: str) -> list[dict[str, str]]:
    text = resources.files("cryptoscope.data").joinpath(name).read_text(encoding="utf-8")
    lines = [l for l in text.splitlines() if l.strip() and not l.startswith("#")]
    return list(csv.DictReader(lines, delimiter="\t"))


@dataclass(frozen=True)
class Components:
    kex: str
    auth: str
    cipher: str
    mode: str
    mac_or_hash: str

    def to_dict(self) -> dict[str, str]:
        return {
            "kex": self.kex,
            "auth": self.auth,
            "cipher": self.cipher,
            "mode": self.mode,
            "mac_or_hash": self.mac_or_hash,
        }


@lru_cache(maxsize=None)
def suite_table() -> dict[str, tuple[Components, bool]]:
    out: dict[str, tuple[Components, bool]] = {}
    for row in _read_tsv("cipher_suites.tsv"):
        comp = Components(row["kex"], row["auth"], row["cipher"], row["mode"], row["hash"])
        out[row["name"].upper()] = (comp, row["aead"].strip().lower() == "true")
    return out


@lru_cache(maxsize=None)
def preset_table() -> dict[str, tuple[str | None, bool]]:
    out: dict[str, tuple[str | None, bool]] = {}
    for row in _read_tsv("presets.tsv"):
        weak = row["weak"].strip()
        out[row["name"]] = (None if weak == "-" else weak, row["fs"].strip() == "yes")
    return out


@lru_cache(maxsize=None)
def curve_table() -> dict[str, str]:
    return {row["name"].lower(): row["category"] for row in _read_tsv("curves.tsv")}


# -- tokens ------------------------------------------------------------------


@dataclass(frozen=True)
class CipherToken:
    text: str
    negated: bool = False
    kind: str = "suite"  # suite | preset | directive_modifier
    op: str = ""  # "", "!", "-", "+"

    def display(self) -> str:
        return f"{self.op}{self.text}"

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "negated": self.negated, "kind": self.kind, "op": self.op}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> CipherToken:
        return cls(d["text"], bool(d["negated"]), d["kind"], d.get("op", "!" if d["negated"] else ""))


def _lookup_preset(text: str) -> tuple[str | None, bool] | None:
    table = preset_table()
    if text in table:
        return table[text]
    upper = text.upper()
    for name, val in table.items():
        if name.upper() == upper:
            return val
    return None


def _token_kind(text: str) -> str:
    if text.startswith("@"):
        return "directive_modifier"
    if "+" in text or _lookup_preset(text) is not None:
        return "preset"
    return "suite"


def tokenize_cipher_string(raw: str) -> list[CipherToken]:
    """Split an OpenSSL/JSSE cipher string into classified tokens.

    Separators are ``:``, ``,`` and whitespace. ``!X`` and ``-X`` both mark
    the token negated; ``+X`` reorders only and stays affirmative.
    """
    if not raw:
        return []
    tokens: list[CipherToken] = []
    for piece in re.split(r"[:,\s]+", raw.strip()):
        if not piece:
            continue
        op = ""
        if piece[0] in "!-+" and len(piece) > 1:
            op, piece = piece[0], piece[1:]
        tokens.append(CipherToken(piece, op in ("!", "-"), _token_kind(piece), op))
    return tokens


# -- suite classification ----------------------------------------------------


@dataclass
class CipherClassification:
    token: CipherToken
    kex_category: str
    aead: bool | None
    weak_flags: frozenset[str]
    quantum_verdict: str
    components: Components | None = None
    fs_hint: bool = False
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "token": self.token.to_dict(),
            "kex_category": self.kex_category,
            "aead": self.aead,
            "weak_flags": sorted(self.weak_flags),
            "quantum_verdict": self.quantum_verdict,
            "components": self.components.to_dict() if self.components else None,
        }


_VERDICT = {
    "rsa_kex": "vulnerable_no_fs",
    "ecdhe_dhe": "vulnerable_fs",
    "pqc_hybrid": "resistant_hybrid",
    "tls13_suite": "indeterminate",
    "unknown": "indeterminate",
}


def kex_category(kex: str) -> str:
    if kex in FS_KEX:
        return "ecdhe_dhe"
    if kex in RSA_KEX:
        return "rsa_kex"
    if kex == "ANY":
        return "tls13_suite"
    return "unknown"


def weak_flags_for(comp: Components) -> frozenset[str]:
    flags = set()
    if comp.cipher in ("RC4", "DES", "3DES", "NULL"):
        flags.add(comp.cipher)
    if comp.kex.endswith("_EXPORT"):
        flags.add("EXPORT")
    if comp.mac_or_hash == "MD5":
        flags.add("MD5")
    return frozenset(flags)


def cipher_bits(cipher: str, kex: str = "") -> int | None:
    """Nominal symmetric key size, used for Grover margin checks."""
    if kex.endswith("_EXPORT"):
        return 40
    m = re.search(r"(\d+)$", cipher)
    if m and cipher[: m.start()] in ("AES", "CAMELLIA", "ARIA"):
        return int(m.group(1))
    return {"CHACHA20": 256, "3DES": 112, "DES": 56, "RC4": 128, "IDEA": 128, "SEED": 128, "NULL": 0}.get(cipher)


# OpenSSL-style name grammar: [kex[-auth]-]cipher[-mode]-hash
_OSSL_PREFIXES = [
    ("ECDHE-ECDSA-", "ECDHE", "ECDSA"),
    ("ECDHE-RSA-", "ECDHE", "RSA"),
    ("ECDHE-PSK-", "ECDHEPSK", "PSK"),
    ("ECDHE-", "ECDHE", "RSA"),
    ("EECDH-", "ECDHE", "RSA"),
    ("DHE-RSA-", "DHE", "RSA"),
    ("DHE-DSS-", "DHE", "DSS"),
    ("DHE-PSK-", "DHEPSK", "PSK"),
    ("EDH-RSA-", "DHE", "RSA"),
    ("EDH-DSS-", "DHE", "DSS"),
    ("DHE-", "DHE", "RSA"),
    ("ADH-", "DHE", "NULL"),
    ("AECDH-", "ECDHE", "NULL"),
    ("RSA-PSK-", "RSAPSK", "RSA"),
    ("PSK-", "PSK", "PSK"),
    ("SRP-RSA-", "SRP", "RSA"),
    ("SRP-DSS-", "SRP", "DSS"),
    ("SRP-", "SRP", "SRP"),
]

_OSSL_CIPHER = re.compile(
    r"^(?P<cipher>AES128|AES256|AES|CAMELLIA128|CAMELLIA256|ARIA128|ARIA256|CHACHA20|RC4|DES-CBC3|DES-CBC|IDEA-CBC|SEED|NULL)"
    r"(?:-(?P<mode>GCM|CCM8|CCM|POLY1305|CBC))?"
    r"(?:-(?P<hash>SHA384|SHA256|SHA|MD5))?$"
)


def _parse_openssl_name(name: str) -> Components | None:
    kex, auth, rest = "RSA", "RSA", name
    if rest.startswith("EXP-"):
        rest = rest[4:]
        kex = "RSA_EXPORT"
        if rest.startswith("EDH-RSA-"):
            kex, rest = "DHE_EXPORT", rest[8:]
    else:
        for prefix, k, a in _OSSL_PREFIXES:
            if rest.startswith(prefix):
                kex, auth, rest = k, a, rest[len(prefix) :]
                break
    rest = re.sub(r"^(AES|CAMELLIA|ARIA)-(128|256)\b", r"\1\2", rest)
    m = _OSSL_CIPHER.match(rest)
    if not m:
        return None
    raw_cipher, mode, hsh = m.group("cipher"), m.group("mode"), m.group("hash")
    cipher = {"DES-CBC3": "3DES", "DES-CBC": "DES", "IDEA-CBC": "IDEA", "AES": "AES128"}.get(raw_cipher, raw_cipher)
    if cipher == "CHACHA20":
        if mode not in (None, "POLY1305"):
            return None
        mode = "POLY1305"
    elif cipher == "RC4":
        mode = "STREAM"
    elif cipher == "NULL":
        mode = "NONE"
    elif mode is None:
        mode = "CBC"
    if mode in AEAD_MODES:
        hsh = "AEAD"
    elif hsh is None:
        return None
    elif hsh == "SHA":
        hsh = "SHA1"
    return Components(kex, auth, cipher, mode, hsh)


_IANA = re.compile(r"^(?:TLS|SSL)_(?:(?P<kx>.+?)_WITH_)?(?P<enc>.+?)(?:_(?P<mac>SHA384|SHA256|SHA|MD5))?$")
_IANA_KX = {
    "RSA": ("RSA", "RSA"),
    "ECDHE_RSA": ("ECDHE", "RSA"),
    "ECDHE_ECDSA": ("ECDHE", "ECDSA"),
    "DHE_RSA": ("DHE", "RSA"),
    "DHE_DSS": ("DHE", "DSS"),
    "DH_ANON": ("DHE", "NULL"),
    "ECDH_ANON": ("ECDHE", "NULL"),
    "PSK": ("PSK", "PSK"),
    "ECDHE_PSK": ("ECDHEPSK", "PSK"),
    "DHE_PSK": ("DHEPSK", "PSK"),
    "RSA_PSK": ("RSAPSK", "PSK"),
    "RSA_EXPORT": ("RSA_EXPORT", "RSA"),
    "DHE_RSA_EXPORT": ("DHE_EXPORT", "RSA"),
    "ECDH_RSA": ("ECDH", "RSA"),
    "ECDH_ECDSA": ("ECDH", "ECDSA"),
}
_IANA_ENC = [
    (re.compile(r"^AES_(128|256)_GCM$"), lambda m: (f"AES{m.group(1)}", "GCM")),
    (re.compile(r"^AES_(128|256)_CCM_8$"), lambda m: (f"AES{m.group(1)}", "CCM8")),
    (re.compile(r"^AES_(128|256)_CCM$"), lambda m: (f"AES{m.group(1)}", "CCM")),
    (re.compile(r"^AES_(128|256)_CBC$"), lambda m: (f"AES{m.group(1)}", "CBC")),
    (re.compile(r"^CAMELLIA_(128|256)_CBC$"), lambda m: (f"CAMELLIA{m.group(1)}", "CBC")),
    (re.compile(r"^CAMELLIA_(128|256)_GCM$"), lambda m: (f"CAMELLIA{m.group(1)}", "GCM")),
    (re.compile(r"^ARIA_(128|256)_GCM$"), lambda m: (f"ARIA{m.group(1)}", "GCM")),
    (re.compile(r"^ARIA_(128|256)_CBC$"), lambda m: (f"ARIA{m.group(1)}", "CBC")),
    (re.compile(r"^CHACHA20_POLY1305$"), lambda m: ("CHACHA20", "POLY1305")),
    (re.compile(r"^3DES_EDE_CBC$"), lambda m: ("3DES", "CBC")),
    (re.compile(r"^DES(40)?_CBC$"), lambda m: ("DES", "CBC")),
    (re.compile(r"^RC4_(40|128)$"), lambda m: ("RC4", "STREAM")),
    (re.compile(r"^IDEA_CBC$"), lambda m: ("IDEA", "CBC")),
    (re.compile(r"^SEED_CBC$"), lambda m: ("SEED", "CBC")),
    (re.compile(r"^NULL$"), lambda m: ("NULL", "NONE")),
]


def _parse_iana_name(name: str) -> Components | None:
    m = _IANA.match(name)
    if not m:
        return None
    kx = m.group("kx")
    if kx is None:
        kex, auth = "ANY", "ANY"
    elif kx in _IANA_KX:
        kex, auth = _IANA_KX[kx]
    else:
        return None
    enc = m.group("enc")
    for pat, fn in _IANA_ENC:
        em = pat.match(enc)
        if em:
            cipher, mode = fn(em)
            break
    else:
        return None
    mac = m.group("mac")
    if mode in AEAD_MODES:
        return Components(kex, auth, cipher, mode, "AEAD")
    if kex == "ANY" or mac is None:
        return None
    return Components(kex, auth, cipher, mode, "SHA1" if mac == "SHA" else mac)


def suite_components(name: str) -> tuple[Components, bool] | None:
    """Components and AEAD flag for a suite name, or None when unparseable."""
    key = name.upper()
    hit = suite_table().get(key)
    if hit is not None:
        return hit
    comp = _parse_iana_name(key) if key.startswith(("TLS_", "SSL_")) else _parse_openssl_name(key)
    if comp is None:
        return None
    return comp, comp.mode in AEAD_MODES


def classify_suite(token: CipherToken) -> CipherClassification:
    parsed = suite_components(token.text)
    if parsed is None:
        return CipherClassification(
            token, "unknown", None, frozenset(), "indeterminate", None,
            warnings=[f"unrecognized cipher suite '{token.text}'"],
        )
    comp, aead = parsed
    cat = kex_category(comp.kex)
    return CipherClassification(
        token, cat, aead, weak_flags_for(comp), _VERDICT[cat], comp, fs_hint=cat == "ecdhe_dhe"
    )


def classify_preset(token: CipherToken) -> CipherClassification:
    weak: set[str] = set()
    fs = False
    for part in token.text.split("+"):
        hit = _lookup_preset(part)
        if hit is None:
            continue
        if hit[0]:
            weak.add(hit[0])
        fs = fs or hit[1]
    return CipherClassification(token, "unknown", None, frozenset(weak), "indeterminate", None, fs_hint=fs)


def classify_token(token: CipherToken) -> CipherClassification:
    if token.kind == "suite":
        return classify_suite(token)
    if token.kind == "preset":
        return classify_preset(token)
    return CipherClassification(token, "unknown", None, frozenset(), "indeterminate")


def classify_tokens(tokens: Iterable[CipherToken]) -> list[CipherClassification]:
    return [classify_token(t) for t in tokens]


def active_suites(classifications: Iterable[CipherClassification]) -> list[CipherClassification]:
    return [c for c in classifications if c.token.kind == "suite" and not c.token.negated]


def weak_tokens(classifications: Iterable[CipherClassification]) -> list[CipherClassification]:
    """Non-negated tokens referencing a weak family. Negated entries never count."""
    return [c for c in classifications if c.weak_flags and not c.token.negated]


def detect_mixed_strength(classifications: Iterable[CipherClassification]) -> bool:
    suites = active_suites(classifications)
    return any(c.aead for c in suites) and any(c.weak_flags for c in suites)


def detect_legacy_presets(tokens: Iterable[CipherToken]) -> set[str]:
    """Preset and negation tokens, with negation kept as a ``!`` prefix."""
    found: set[str] = set()
    for t in tokens:
        if t.kind == "preset" or (t.negated and t.kind != "directive_modifier"):
            found.add(("!" if t.negated else "") + t.text)
    return found


# -- curves and context key exchange ------------------------------------------

_PQ_MARKERS = ("MLKEM", "ML-KEM", "KYBER")


def classify_curve(name: str) -> str:
    key = name.strip()
    if not key:
        return "unknown"
    hit = curve_table().get(key.lower())
    if hit:
        return hit
    if any(m in key.upper() for m in _PQ_MARKERS):
        return "pqc_hybrid"
    return "unknown"


def _effective_protocols(utm) -> frozenset[str]:
    return frozenset(utm.protocols) if utm.protocols is not None else DEFAULT_PROTOCOLS


def classify_context_kex(utm) -> str:
    """Context-level key exchange category. Precedence: hybrid > ecdhe_dhe > rsa_kex."""
    if any(classify_curve(c) == "pqc_hybrid" for c in utm.ciphers.ecdh_curves or []):
        return "pqc_hybrid"
    classes = classify_tokens(utm.ciphers.suite_tokens or [])
    suites = active_suites(classes)
    fs_preset = any(c.fs_hint for c in classes if c.token.kind == "preset" and not c.token.negated)
    fs_suite = any(c.kex_category in ("ecdhe_dhe", "tls13_suite") for c in suites)
    non_fs_only = bool(suites) and not fs_preset and all(c.kex_category == "rsa_kex" for c in suites)
    if fs_suite or fs_preset:
        return "ecdhe_dhe"
    if non_fs_only:
        return "rsa_kex"
    if "TLSv1.3" in _effective_protocols(utm):
        return "ecdhe_dhe"
    return "unknown"


# -- key references, certificates, storage, hostnames -------------------------


def classify_key_ref(path: str | None, engine: str | None = None) -> str | None:
    if path is None and not engine:
        return None
    p = (path or "").strip()
    if p.lower().startswith("pkcs11:"):
        return "pkcs11_uri"
    if engine or p.lower().startswith("engine:"):
        return "engine_ref"
    if has_interpolation(p):
        return "env_var"
    if p.startswith("/run/secrets/"):
        return "docker_secret"
    if not p.startswith("/"):
        return "relative"
    return "filesystem"


def detect_hsm(utm) -> str | None:
    """Key storage kind of a context, recognising PKCS#11 URIs and engine references."""
    certs = utm.certificates
    return classify_key_ref(certs.key_path, certs.engine)


def is_hsm(kind: str | None) -> bool:
    return kind in ("pkcs11_uri", "engine_ref")


def _segments(path: str) -> list[str]:
    return [s for s in path.replace("\\", "/").split("/") if s]


def classify_cert_origin(cert_path: str, utm=None) -> str:
    lower = cert_path.lower()
    if "/etc/letsencrypt/" in lower or any("acme" in s for s in _segments(lower)):
        return "lets_encrypt_acme"
    name = _segments(lower)[-1] if _segments(lower) else ""
    if any(k in name for k in ("selfsigned", "self", "snakeoil")):
        return "self_signed_indicator"
    if has_interpolation(cert_path):
        return "env_var"
    return "other"


def classify_cert_chain(cert_path: str) -> str:
    segs = _segments(cert_path.lower())
    name = segs[-1] if segs else ""
    return "fullchain_bundle" if any(k in name for k in ("fullchain", "bundle", "chain")) else "leaf_only"


def classify_storage(path: str) -> str:
    p = path.strip()
    if p.startswith("/run/secrets/"):
        return "docker_secrets"
    if p.startswith("/etc/letsencrypt/"):
        return "letsencrypt"
    if p.startswith("/etc/nginx/"):
        return "nginx_dir"
    if p.startswith(("/etc/ssl/", "/etc/pki/")):
        return "ssl_pki"
    if p.startswith(("/opt/", "/srv/")):
        return "opt_srv"
    if p.lower().startswith(("pkcs11:", "engine:")):
        return "hsm"
    if has_interpolation(p):
        return "env_var"
    if not p.startswith("/"):
        return "relative"
    return "other_absolute"


_EXAMPLE_DOMAINS = ("example.com", "example.net", "example.org")
_RESERVED_TLDS = ("test", "invalid", "local", "example")
_TLD = re.compile(r"^[a-z][a-z0-9-]{1,62}$")


def classify_hostname(server_name: str | None) -> str:
    name = (server_name or "").strip().strip('"').lower()
    if not name:
        return "empty"
    if name == "_":
        return "catch_all"
    if has_interpolation(name):
        return "env_var"
    if name == "localhost":
        return "localhost"
    if name == "127.0.0.1":
        return "loopback_ip"
    if name == "*":
        return "wildcard_only"
    bare = name.lstrip("*.").rstrip(".")
    if any(bare == d or bare.endswith("." + d) for d in _EXAMPLE_DOMAINS):
        return "example_domain"
    labels = bare.split(".")
    if len(labels) >= 2 and labels[-1] in _RESERVED_TLDS:
        return "example_domain"
    if len(labels) >= 2 and all(labels) and _TLD.match(labels[-1]):
        return "domain_like"
    return "other"


def is_non_production(category: str) -> bool:
    return category != "domain_like"
