"""Corpus-level measurement: RQ1-RQ20 metrics over per-context records.

Every fraction carries its denominator next to it and is ``None`` when the
denominator is zero. Distributions over a fixed category set list every
category, so they sum to one whenever they are defined.
"""

from __future__ import annotations

import itertools
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Any, Iterable

from . import crypto
from ._io import has_interpolation
from .ingest import status_stratum
from .normalize import UnifiedTlsModel, sorted_protocols

METRICS_SCHEMA_VERSION = "1"
STRATA = ("active", "archived_or_dormant", "unknown")
PROTOCOLS = ("SSLv3", "TLSv1.0", "TLSv1.1", "TLSv1.2", "TLSv1.3")
DRIFT_FIELDS = ("ciphers", "hsts", "protocols", "prefer_server_order")
SESSION_KINDS = ("unset", "shared", "builtin", "off")
TOP_PAIRS = 10


@dataclass
class ContextRecord:
    context_id: str
    file: str
    ordinal: int
    tls_enabled: bool
    utm: UnifiedTlsModel
    status: str | None = None  # repository status: active / archived / dormant

    @property
    def stratum(self) -> str:
        return status_stratum(self.status)


def frac(num: int | float, den: int) -> float | None:
    return None if den == 0 else num / den


def distribution(counter: Counter, categories: Iterable[str], den: int) -> dict[str, float | None]:
    return {c: frac(counter.get(c, 0), den) for c in categories}


def explicit_ciphers(utm: UnifiedTlsModel) -> bool:
    return utm.is_populated("ciphers.suite_tokens")


def effective_protocols(utm: UnifiedTlsModel) -> frozenset[str]:
    return frozenset(utm.protocols) if utm.protocols is not None else crypto.DEFAULT_PROTOCOLS


def is_mtls(utm: UnifiedTlsModel) -> bool:
    return utm.verification.client_auth in ("optional", "required")


def _classes(utm: UnifiedTlsModel) -> list[crypto.CipherClassification]:
    return crypto.classify_tokens(utm.ciphers.suite_tokens)


def has_weak(utm: UnifiedTlsModel) -> bool:
    return bool(crypto.weak_tokens(_classes(utm)))


def uses_legacy_presets(utm: UnifiedTlsModel) -> bool:
    return bool(crypto.detect_legacy_presets(utm.ciphers.suite_tokens))


def drift_value(utm: UnifiedTlsModel, fld: str) -> Any:
    if fld == "ciphers":
        return tuple(t.display() for t in utm.ciphers.suite_tokens)
    if fld == "hsts":
        h = utm.security_headers
        return (h.hsts_present, h.hsts_max_age, h.hsts_subdomains)
    if fld == "protocols":
        return None if utm.protocols is None else tuple(sorted_protocols(utm.protocols))
    if fld == "prefer_server_order":
        return utm.ciphers.prefer_server_order
    raise KeyError(fld)


def _by_file(records: list[ContextRecord]) -> dict[str, list[ContextRecord]]:
    files: dict[str, list[ContextRecord]] = defaultdict(list)
    for r in records:
        files[r.file].append(r)
    return files


def internal_drift(file_contexts: dict[str, list[ContextRecord]]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    multi = {f: [r for r in rs if r.tls_enabled] for f, rs in file_contexts.items()}
    multi = {f: rs for f, rs in multi.items() if len(rs) >= 2}
    any_drift = set()
    for fld in DRIFT_FIELDS:
        drifting = sorted(f for f, rs in multi.items() if len({drift_value(r.utm, fld) for r in rs}) > 1)
        any_drift.update(drifting)
        out[fld] = {"files_multi_context": len(multi), "files_drifting": len(drifting), "rate": frac(len(drifting), len(multi))}
    out["any"] = {"files_multi_context": len(multi), "files_drifting": len(any_drift), "rate": frac(len(any_drift), len(multi))}
    return out


def plaintext_coexistence(file_contexts: dict[str, list[ContextRecord]]) -> dict[str, Any]:
    tls_files = [f for f, rs in file_contexts.items() if any(r.tls_enabled for r in rs)]
    coexist = [f for f in tls_files if any(not r.tls_enabled for r in file_contexts[f])]
    return {
        "tls_files": len(tls_files),
        "files_with_plaintext": len(coexist),
        "tls_only_files": len(tls_files) - len(coexist),
        "fraction": frac(len(coexist), len(tls_files)),
    }


def _stratum_counts(tls: list[ContextRecord]) -> dict[str, dict[str, int]]:
    out = {}
    for s in STRATA:
        rs = [r for r in tls if r.stratum == s]
        explicit = [r for r in rs if explicit_ciphers(r.utm)]
        kex = Counter(crypto.classify_context_kex(r.utm) for r in rs)
        out[s] = {
            "tls_contexts": len(rs),
            "explicit_cipher_contexts": len(explicit),
            "weak_contexts": sum(has_weak(r.utm) for r in explicit),
            "legacy_preset_contexts": sum(uses_legacy_presets(r.utm) for r in explicit),
            "hsts_contexts": sum(r.utm.security_headers.hsts_present for r in rs),
            "mtls_contexts": sum(is_mtls(r.utm) for r in rs),
            "mixed_strength_contexts": sum(crypto.detect_mixed_strength(_classes(r.utm)) for r in explicit),
            **{f"kex_{k}": kex.get(k, 0) for k in crypto.CONTEXT_KEX_CATEGORIES},
        }
    return out


def compute_metrics(records: list[ContextRecord]) -> dict[str, Any]:
    """Every RQ metric over ``records``; see the module docstring for null handling."""
    records = sorted(records, key=lambda r: (r.file, r.ordinal, r.context_id))
    files = _by_file(records)
    tls = [r for r in records if r.tls_enabled]
    nt = len(tls)
    explicit = [r for r in tls if explicit_ciphers(r.utm)]
    ne = len(explicit)

    # RQ1
    proto_counts = Counter(p for r in tls for p in effective_protocols(r.utm))
    rq1 = {
        "denominator": nt,
        "explicit_protocol_contexts": sum(r.utm.is_populated("protocols") for r in tls),
        "counts": {p: proto_counts.get(p, 0) for p in PROTOCOLS},
        "adoption": {p: frac(proto_counts.get(p, 0), nt) for p in PROTOCOLS},
        "legacy_tls_fraction": frac(sum(bool(effective_protocols(r.utm) & {"TLSv1.0", "TLSv1.1"}) for r in tls), nt),
    }

    # RQ2
    weak_ctx = [r for r in explicit if has_weak(r.utm)]
    fam = Counter(f for r in explicit for c in crypto.weak_tokens(_classes(r.utm)) for f in c.weak_flags)
    pairs: Counter = Counter()
    for r in explicit:
        names = sorted({t.text for t in r.utm.ciphers.suite_tokens if t.kind == "suite" and not t.negated})
        pairs.update(itertools.combinations(names, 2))
    top = sorted(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[:TOP_PAIRS]
    rq2 = {
        "contexts_with_explicit_ciphers": ne,
        "weak_contexts": len(weak_ctx),
        "weak_fraction": frac(len(weak_ctx), ne),
        "weak_family_occurrences": {f: fam.get(f, 0) for f in crypto.WEAK_FAMILIES},
        "top_cooccurring_pairs": [{"pair": list(p), "contexts": n} for p, n in top],
    }

    # RQ3
    kex = Counter(crypto.classify_context_kex(r.utm) for r in tls)
    rq3 = {
        "denominator": nt,
        "counts": {k: kex.get(k, 0) for k in crypto.CONTEXT_KEX_CATEGORIES},
        "fractions": distribution(kex, crypto.CONTEXT_KEX_CATEGORIES, nt),
    }

    # RQ4
    c = tls
    rq4 = {
        "denominator": nt,
        "cert": frac(sum(r.utm.certificates.cert_path is not None for r in c), nt),
        "key": frac(sum(r.utm.certificates.key_path is not None for r in c), nt),
        "dhparam": frac(sum(r.utm.certificates.dhparam_path is not None for r in c), nt),
        "hsm": frac(sum(crypto.is_hsm(crypto.detect_hsm(r.utm)) for r in c), nt),
        "env_var_paths": frac(
            sum(r.utm.certificates.cert_path is not None and has_interpolation(r.utm.certificates.cert_path) for r in c),
            nt,
        ),
    }

    # RQ5, RQ6
    rq5 = {"denominator": nt, "fraction": frac(sum(r.utm.security_headers.hsts_present for r in tls), nt)}
    rq6: dict[str, Any] = {"overall": frac(sum(is_mtls(r.utm) for r in tls), nt), "denominator": nt}
    for s in STRATA:
        rs = [r for r in tls if r.stratum == s]
        rq6[s] = frac(sum(is_mtls(r.utm) for r in rs), len(rs))

    # RQ7
    mixed = sum(crypto.detect_mixed_strength(_classes(r.utm)) for r in explicit)
    rq7 = {"denominator": ne, "mixed_contexts": mixed, "fraction": frac(mixed, ne)}

    # RQ8, RQ10
    presets_seen = sorted({p for r in explicit for p in crypto.detect_legacy_presets(r.utm.ciphers.suite_tokens)})
    rq8: dict[str, Any] = {"presets": presets_seen}
    rq10: dict[str, Any] = {}
    for s in ("overall",) + STRATA:
        rs = explicit if s == "overall" else [r for r in explicit if r.stratum == s]
        sets = [crypto.detect_legacy_presets(r.utm.ciphers.suite_tokens) for r in rs]
        rq8[s] = {
            "denominator": len(rs),
            "fractions": {p: frac(sum(p in st for st in sets), len(rs)) for p in presets_seen},
        }
        rq10[s] = {
            "denominator": len(rs),
            "legacy_preset_fraction": frac(sum(bool(st) for st in sets), len(rs)),
            "weak_fraction": frac(sum(has_weak(r.utm) for r in rs), len(rs)),
        }

    # RQ9
    rq9 = internal_drift(files)

    # RQ11
    aead_only = cbc_any = 0
    aead_shares: list[float] = []
    cbc_shares: list[float] = []
    for r in explicit:
        suites = [x for x in crypto.active_suites(_classes(r.utm)) if x.components is not None]
        n = len(suites)
        n_aead = sum(bool(x.aead) for x in suites)
        n_cbc = sum(x.components.mode == "CBC" for x in suites)
        aead_only += n > 0 and n_aead == n
        cbc_any += n_cbc > 0
        aead_shares.append(n_aead / n if n else 0.0)
        cbc_shares.append(n_cbc / n if n else 0.0)
    rq11 = {
        "denominator": ne,
        "aead_only_fraction": frac(aead_only, ne),
        "cbc_any_fraction": frac(cbc_any, ne),
        "mean_aead_share": frac(sum(aead_shares), ne),
        "mean_cbc_share": frac(sum(cbc_shares), ne),
    }

    # RQ12
    joint: Counter = Counter()
    for r in tls:
        pref = {True: "on", False: "off", None: "unset"}[r.utm.ciphers.prefer_server_order]
        quality = "implicit" if not explicit_ciphers(r.utm) else ("weak" if has_weak(r.utm) else "clean")
        joint[f"{pref}|{quality}"] += 1
    rq12 = {
        "denominator": nt,
        "prefer_server_ciphers_fraction": frac(sum(r.utm.ciphers.prefer_server_order is True for r in tls), nt),
        "explicitly_set_fraction": frac(sum(r.utm.is_populated("ciphers.prefer_server_order") for r in tls), nt),
        "joint_counts": {
            f"{p}|{q}": joint.get(f"{p}|{q}", 0) for p in ("on", "off", "unset") for q in ("clean", "weak", "implicit")
        },
    }

    # RQ13
    curve_ctx = [r for r in tls if r.utm.is_populated("ciphers.ecdh_curves")]
    curves = Counter(cv for r in curve_ctx for cv in dict.fromkeys(r.utm.ciphers.ecdh_curves))
    hybrid = sum(any(crypto.classify_curve(cv) == "pqc_hybrid" for cv in r.utm.ciphers.ecdh_curves) for r in curve_ctx)
    rq13 = {
        "contexts_setting_curves": len(curve_ctx),
        "fraction_of_tls": frac(len(curve_ctx), nt),
        "counts": dict(sorted(curves.items(), key=lambda kv: (-kv[1], kv[0]))),
        "pqc_hybrid_contexts": hybrid,
        "pqc_hybrid_fraction": frac(hybrid, len(curve_ctx)),
    }

    # RQ14
    lengths = [len(r.utm.ciphers.suite_tokens) for r in explicit]
    hist = Counter(lengths)
    rq14 = {
        "denominator": ne,
        "histogram": {str(k): hist[k] for k in sorted(hist)},
        "mean": frac(sum(lengths), ne),
        "median": statistics.median(lengths) if lengths else None,
    }

    # RQ15
    cache = Counter(r.utm.session.cache for r in tls)
    rq15 = {"denominator": nt, "fractions": distribution(cache, SESSION_KINDS, nt)}

    # RQ16, RQ17
    cert_ctx = [r for r in tls if r.utm.certificates.cert_path is not None]
    origin = Counter(crypto.classify_cert_origin(r.utm.certificates.cert_path, r.utm) for r in cert_ctx)
    chain = Counter(crypto.classify_cert_chain(r.utm.certificates.cert_path) for r in cert_ctx)
    rq16 = {"denominator": len(cert_ctx), "fractions": distribution(origin, crypto.CERT_ORIGINS, len(cert_ctx))}
    rq17 = {
        "denominator": len(cert_ctx),
        "counts": {k: chain.get(k, 0) for k in crypto.CHAIN_KINDS},
        "fractions": distribution(chain, crypto.CHAIN_KINDS, len(cert_ctx)),
    }

    # RQ18
    paths = [
        p for r in tls for p in (r.utm.certificates.cert_path, r.utm.certificates.key_path) if p is not None
    ]
    storage = Counter(crypto.classify_storage(p) for p in paths)
    rq18 = {"denominator": len(paths), "fractions": distribution(storage, crypto.STORAGE_PATTERNS, len(paths))}

    # RQ19
    rq19 = plaintext_coexistence(files)

    # RQ20
    hosts = Counter(crypto.classify_hostname(r.utm.endpoint.hostname) for r in tls)
    rq20 = {
        "denominator": nt,
        "fractions": distribution(hosts, crypto.HOSTNAME_CATEGORIES, nt),
        "non_production_fraction": frac(sum(n for k, n in hosts.items() if crypto.is_non_production(k)), nt),
    }

    return {
        "schema_version": METRICS_SCHEMA_VERSION,
        "totals": {
            "files": len(files),
            "contexts": len(records),
            "tls_contexts": nt,
            "explicit_cipher_contexts": ne,
        },
        "strata": _stratum_counts(tls),
        "rq1_protocol_adoption": rq1,
        "rq2_weak_token": rq2,
        "rq3_kex_categories": rq3,
        "rq4_cert_key_presence": rq4,
        "rq5_hsts": rq5,
        "rq6_mtls": rq6,
        "rq7_mixed_strength": rq7,
        "rq8_legacy_presets": rq8,
        "rq9_internal_drift": rq9,
        "rq10_active_vs_archived": rq10,
        "rq11_aead_cbc": rq11,
        "rq12_prefer_server_ciphers": rq12,
        "rq13_curve_distribution": rq13,
        "rq14_cipher_length_histogram": rq14,
        "rq15_session_cache_distribution": rq15,
        "rq16_cert_origin_distribution": rq16,
        "rq17_bundle_vs_leaf": rq17,
        "rq18_storage_distribution": rq18,
        "rq19_plaintext_coexistence": rq19,
        "rq20_hostname_distribution": rq20,
    }


def status_split(records: list[ContextRecord]) -> dict[str, dict[str, Any]]:
    """Full metric set per repository stratum; ``unknown`` collects records without metadata."""
    return {s: compute_metrics([r for r in records if r.stratum == s]) for s in STRATA}


# -- text rendering ----------------------------------------------------------------


def _fmt(v: Any) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v * 100:.1f}%"
    return str(v)


def render_text(m: dict[str, Any]) -> str:
    """Plain-text tables, one block per research question."""
    lines: list[str] = []

    def block(title: str, rows: Iterable[tuple[str, Any]]) -> None:
        lines.append(title)
        rows = list(rows)
        width = max((len(k) for k, _ in rows), default=0)
        for k, v in rows:
            lines.append(f"  {k.ljust(width)}  {_fmt(v)}")
        lines.append("")

    t = m["totals"]
    block("Totals", t.items())
    block(f"RQ1 protocol adoption (n={t['tls_contexts']})", m["rq1_protocol_adoption"]["adoption"].items())
    rq2 = m["rq2_weak_token"]
    block(
        f"RQ2 weak cipher tokens (n={rq2['contexts_with_explicit_ciphers']})",
        [("weak_fraction", rq2["weak_fraction"])]
        + [(" + ".join(p["pair"]), p["contexts"]) for p in rq2["top_cooccurring_pairs"][:3]],
    )
    block("RQ3 key exchange categories", m["rq3_kex_categories"]["fractions"].items())
    block("RQ4 certificate and key management", [(k, v) for k, v in m["rq4_cert_key_presence"].items() if k != "denominator"])
    block("RQ5 HSTS", [("fraction", m["rq5_hsts"]["fraction"])])
    block("RQ6 mutual TLS", [(k, v) for k, v in m["rq6_mtls"].items() if k != "denominator"])
    block("RQ7 mixed strength", [("fraction", m["rq7_mixed_strength"]["fraction"])])
    rq8 = m["rq8_legacy_presets"]
    block(
        "RQ8 legacy presets (active / archived-or-dormant)",
        [
            (p, f"{_fmt(rq8['active']['fractions'][p])} / {_fmt(rq8['archived_or_dormant']['fractions'][p])}")
            for p in rq8["presets"]
        ],
    )
    block("RQ9 internal drift", [(k, v["rate"]) for k, v in m["rq9_internal_drift"].items()])
    block("RQ10 legacy preset usage", [(k, v["legacy_preset_fraction"]) for k, v in m["rq10_active_vs_archived"].items()])
    block("RQ11 AEAD vs CBC", [(k, v) for k, v in m["rq11_aead_cbc"].items() if k != "denominator"])
    block("RQ12 prefer server ciphers", [("fraction", m["rq12_prefer_server_ciphers"]["prefer_server_ciphers_fraction"])])
    block("RQ13 curves", list(m["rq13_curve_distribution"]["counts"].items()))
    block("RQ14 cipher string length", list(m["rq14_cipher_length_histogram"]["histogram"].items()))
    block("RQ15 session cache", m["rq15_session_cache_distribution"]["fractions"].items())
    block("RQ16 certificate origin", m["rq16_cert_origin_distribution"]["fractions"].items())
    block("RQ17 bundle vs leaf", m["rq17_bundle_vs_leaf"]["fractions"].items())
    block("RQ18 storage patterns", m["rq18_storage_distribution"]["fractions"].items())
    block("RQ19 plaintext coexistence", [(k, v) for k, v in m["rq19_plaintext_coexistence"].items()])
    rq20 = m["rq20_hostname_distribution"]
    block("RQ20 hostnames", list(rq20["fractions"].items()) + [("non_production", rq20["non_production_fraction"])])
    return "\n".join(lines)


def distributions_for_csv(m: dict[str, Any]) -> dict[str, list[tuple[str, Any]]]:
    """Flat (category, value) tables, one per plottable distribution."""
    return {
        "rq1_protocol_adoption": list(m["rq1_protocol_adoption"]["adoption"].items()),
        "rq2_weak_families": list(m["rq2_weak_token"]["weak_family_occurrences"].items()),
        "rq3_kex_categories": list(m["rq3_kex_categories"]["fractions"].items()),
        "rq9_internal_drift": [(k, v["rate"]) for k, v in m["rq9_internal_drift"].items()],
        "rq13_curve_distribution": list(m["rq13_curve_distribution"]["counts"].items()),
        "rq14_cipher_length_histogram": list(m["rq14_cipher_length_histogram"]["histogram"].items()),
        "rq15_session_cache_distribution": list(m["rq15_session_cache_distribution"]["fractions"].items()),
        "rq16_cert_origin_distribution": list(m["rq16_cert_origin_distribution"]["fractions"].items()),
        "rq17_bundle_vs_leaf": list(m["rq17_bundle_vs_leaf"]["counts"].items()),
        "rq18_storage_distribution": list(m["rq18_storage_distribution"]["fractions"].items()),
        "rq20_hostname_distribution": list(m["rq20_hostname_distribution"]["fractions"].items()),
    }
