"""Corpus loading: file discovery, manifests, hashing, dedup, confidence, liveness."""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Any

logger = logging.getLogger(__name__)

TECHNOLOGIES = ("nginx", "apache", "springboot", "unknown")
STATUSES = ("active", "archived", "dormant")
DORMANCY_MONTHS = 24
DEFAULT_CONFIDENCE_THRESHOLD = 0.5

NGINX_NAMES = {"nginx.conf", "default.conf", "ssl.conf"}
APACHE_NAMES = {"httpd.conf", "apache2.conf"}
_SPRING_RE = re.compile(r"^application[^/]*\.(ya?ml|properties)$", re.IGNORECASE)

_TRUE = {"true", "1", "yes", "y", "t"}
_FALSE = {"false", "0", "no", "n", "f", ""}


class ManifestError(ValueError):
    def __init__(self, manifest: str, line: int, reason: str) -> None:
        self.manifest = manifest
        self.line = line
        super().__init__(f"{manifest}:{line}: {reason}")


class CorpusError(OSError):
    pass


@dataclass
class RepoMeta:
    owner: str
    repo: str
    archived_flag: bool
    last_push: dt.date
    status: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "owner": self.owner,
            "repo": self.repo,
            "archived": self.archived_flag,
            "last_push": self.last_push.isoformat(),
            "status": self.status,
        }


@dataclass
class CorpusEntry:
    path: str
    technology_hint: str
    content: str
    content_hash: str
    repo_meta: RepoMeta | None = None
    confidence: float = 0.0
    root: str | None = None
    annotations: dict[str, str] = field(default_factory=dict)

    @property
    def status(self) -> str | None:
        return self.repo_meta.status if self.repo_meta else None


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def guess_technology(rel_path: str, content: str) -> str | None:
    """Filename heuristics; returns None when the file is not a candidate."""
    p = PurePosixPath(rel_path)
    name = p.name.lower()
    if _SPRING_RE.match(name):
        return "springboot"
    if name in APACHE_NAMES:
        return "apache"
    in_nginx_dir = "nginx" in rel_path.lower()
    if name.endswith(".conf"):
        if not in_nginx_dir and "<virtualhost" in content.lower():
            return "apache"
        if in_nginx_dir or name in NGINX_NAMES:
            return "nginx"
    return None


def _parse_bool(raw: Any, manifest: str, line: int) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ManifestError(manifest, line, f"archived must be boolean, got {raw!r}")


def _parse_date(raw: Any, manifest: str, line: int) -> dt.date:
    text = str(raw).strip()
    try:
        if "T" in text or " " in text:
            return dt.datetime.fromisoformat(text.replace("Z", "+00:00")).astimezone(dt.timezone.utc).date()
        return dt.date.fromisoformat(text)
    except ValueError:
        raise ManifestError(manifest, line, f"last_push is not an ISO-8601 date: {raw!r}") from None


def _manifest_rows(manifest: Path) -> list[tuple[int, dict[str, Any]]]:
    name = str(manifest)
    try:
        text = manifest.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(name, 0, f"unreadable: {exc}") from None
    rows: list[tuple[int, dict[str, Any]]] = []
    if manifest.suffix.lower() in (".jsonl", ".ndjson", ".json"):
        for no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(name, no, f"invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise ManifestError(name, no, "expected a JSON object")
            rows.append((no, obj))
    else:
        reader = csv.DictReader(text.splitlines())
        if reader.fieldnames is None or "path" not in [f.strip() for f in reader.fieldnames]:
            raise ManifestError(name, 1, "CSV header must include a 'path' column")
        for row in reader:
            clean = {(k or "").strip(): (v.strip() if isinstance(v, str) else v) for k, v in row.items()}
            if None in row:
                raise ManifestError(name, reader.line_num, "too many fields")
            rows.append((reader.line_num, clean))
    return rows


def read_manifest(manifest: str | os.PathLike) -> dict[str, dict[str, Any]]:
    """Map relative path -> {repo_meta, technology, annotations}."""
    manifest = Path(manifest)
    out: dict[str, dict[str, Any]] = {}
    for line, row in _manifest_rows(manifest):
        path = str(row.get("path") or "").strip()
        if not path:
            raise ManifestError(str(manifest), line, "missing path")
        path = PurePosixPath(path.replace("\\", "/")).as_posix().lstrip("./") if path.startswith("./") else path.replace("\\", "/")
        tech = (row.get("technology") or "").strip().lower() or None
        if tech is not None and tech not in TECHNOLOGIES:
            raise ManifestError(str(manifest), line, f"unknown technology {tech!r}")
        meta = None
        if row.get("owner") or row.get("repo") or row.get("last_push"):
            for col in ("owner", "repo", "last_push"):
                if not str(row.get(col) or "").strip():
                    raise ManifestError(str(manifest), line, f"missing {col}")
            meta = RepoMeta(
                owner=str(row["owner"]).strip(),
                repo=str(row["repo"]).strip(),
                archived_flag=_parse_bool(row.get("archived", False), str(manifest), line),
                last_push=_parse_date(row["last_push"], str(manifest), line),
            )
        annotations = {}
        if str(row.get("sensitivity") or "").strip():
            annotations["sensitivity"] = str(row["sensitivity"]).strip()
        out[path] = {"repo_meta": meta, "technology": tech, "annotations": annotations}
    return out


def _months_before(ref: dt.date, months: int) -> dt.date:
    y, m = divmod(ref.year * 12 + (ref.month - 1) - months, 12)
    month = m + 1
    day = ref.day
    while True:
        try:
            return dt.date(y, month, day)
        except ValueError:
            day -= 1


def classify_repo_status(meta: RepoMeta, reference_date: dt.date) -> str:
    if meta.last_push > reference_date:
        raise ValueError(f"last_push {meta.last_push} is after reference date {reference_date}")
    if meta.archived_flag:
        return "archived"
    if meta.last_push < _months_before(reference_date, DORMANCY_MONTHS):
        return "dormant"
    return "active"


def status_stratum(status: str | None) -> str:
    """Two-way rollup used by analytics: active vs archived-or-dormant."""
    if status is None:
        return "unknown"
    return "active" if status == "active" else "archived_or_dormant"


# -- confidence --------------------------------------------------------------

_NGINX_TLS = re.compile(r"\b(ssl_certificate|ssl_certificate_key|ssl_protocols|ssl_ciphers|ssl_session_cache|ssl_prefer_server_ciphers|ssl_ecdh_curve|ssl_dhparam|ssl_stapling)\b")
_APACHE_TLS = re.compile(r"^\s*(SSLEngine|SSLProtocol|SSLCipherSuite|SSLCertificateFile|SSLCertificateKeyFile|SSLHonorCipherOrder)\b", re.IGNORECASE | re.MULTILINE)
_SPRING_TLS = re.compile(r"(server\.ssl\.|^\s*ssl\s*:|key-store|enabled-protocols)", re.MULTILINE)
_NGINX_OPEN = re.compile(r"\bserver\s*\{")
_APACHE_OPEN = re.compile(r"<VirtualHost\b", re.IGNORECASE)
_SPRING_OPEN = re.compile(r"(^server\s*:|^server\.)", re.MULTILINE)


def _strip_hash_comments(text: str) -> str:
    return "\n".join(line.split("#", 1)[0] for line in text.splitlines())


def _balanced(content: str, tech: str) -> bool:
    if tech == "nginx":
        body = _strip_hash_comments(content)
        opens = body.count("{")
        return opens > 0 and opens == body.count("}")
    if tech == "apache":
        opens = re.findall(r"^\s*<([A-Za-z]+)", content, re.MULTILINE)
        closes = re.findall(r"^\s*</([A-Za-z]+)", content, re.MULTILINE)
        return bool(opens) and sorted(o.lower() for o in opens) == sorted(c.lower() for c in closes)
    if tech == "springboot":
        # YAML/properties have no braces: a consistent key structure stands in
        lines = [l for l in content.splitlines() if l.strip() and not l.lstrip().startswith(("#", "!", "---"))]
        return bool(lines) and all(re.match(r"^\s*(- |[\w.\-\[\]\"']+\s*[:=])", l) for l in lines)
    return False


def _parses(content: str, tech: str) -> bool:
    from types import SimpleNamespace

    from .parsers import ParseError, parse_apache, parse_nginx, parse_springboot

    probe = SimpleNamespace(path="probe.yml" if tech == "springboot" else "probe", content=content)
    try:
        if tech == "nginx":
            parse_nginx(probe)
        elif tech == "apache":
            parse_apache(probe)
        elif tech == "springboot":
            parse_springboot(probe)
        else:
            return False
    except (ParseError, Exception):  # noqa: BLE001 - any parser failure scores zero
        return False
    return True


_MARKERS = {
    "nginx": (_NGINX_TLS, _NGINX_OPEN),
    "apache": (_APACHE_TLS, _APACHE_OPEN),
    "springboot": (_SPRING_TLS, _SPRING_OPEN),
}


def _score(content: str, tech: str) -> float:
    tls_re, open_re = _MARKERS[tech]
    score = 0.0
    if _balanced(content, tech):
        score += 0.2
    if tls_re.search(content):
        score += 0.4
    if open_re.search(content):
        score += 0.3
    if score > 0 and _parses(content, tech):
        score += 0.1
    return min(1.0, round(score, 6))


def classify_confidence(content: str, hint: str, properties: bool = False) -> float:
    """Weighted structural-marker score in [0, 1].

    balanced block structure +0.2, a known TLS directive +0.4, a context
    opener +0.3, parser accepts the text +0.1. The parse bonus needs at
    least one other marker so arbitrary prose never scores.
    """
    if not content or not content.strip():
        return 0.0
    if hint == "unknown" or hint not in _MARKERS:
        return max(_score(content, t) for t in _MARKERS)
    if hint == "springboot" and properties:
        return _score_properties(content)
    return _score(content, hint)


def _score_properties(content: str) -> float:
    from types import SimpleNamespace

    from .parsers import parse_springboot

    score = 0.0
    lines = [l for l in content.splitlines() if l.strip() and not l.lstrip().startswith(("#", "!"))]
    if lines and all(re.match(r"^\s*[\w.\-\[\]]+\s*[:= ]", l) for l in lines):
        score += 0.2
    if _SPRING_TLS.search(content):
        score += 0.4
    if _SPRING_OPEN.search(content):
        score += 0.3
    if score > 0:
        try:
            parse_springboot(SimpleNamespace(path="probe.properties", content=content))
            score += 0.1
        except Exception:  # noqa: BLE001
            pass
    return min(1.0, round(score, 6))


# -- loading -----------------------------------------------------------------


def load_corpus(
    root: str | os.PathLike,
    manifest: str | os.PathLike | None = None,
    reference_date: dt.date | None = None,
    warnings: list[str] | None = None,
) -> list[CorpusEntry]:
    """Load every candidate configuration file under ``root``.

    Entries come back sorted by relative path. Manifest rows are joined by
    path and may force a technology. Repository status is computed only when
    a ``reference_date`` is supplied.
    """
    root_p = Path(root)
    if not root_p.is_dir() or not os.access(root_p, os.R_OK | os.X_OK):
        raise CorpusError(f"corpus root {root} is not a readable directory")
    meta_by_path = read_manifest(manifest) if manifest else {}
    warnings = warnings if warnings is not None else []

    files: list[Path] = []
    for dirpath, dirnames, filenames in os.walk(root_p):
        dirnames.sort()
        for fn in sorted(filenames):
            files.append(Path(dirpath) / fn)

    entries: list[CorpusEntry] = []
    for fp in sorted(files, key=lambda p: p.relative_to(root_p).as_posix()):
        if fp.is_symlink() or not fp.is_file():
            continue
        rel = fp.relative_to(root_p).as_posix()
        if manifest and fp.resolve() == Path(manifest).resolve():
            continue
        row = meta_by_path.get(rel)
        try:
            data = fp.read_bytes()
        except OSError as exc:
            if row is not None or guess_technology(rel, "") is not None:
                warnings.append(f"{rel}: unreadable ({exc.strerror or exc})")
                logger.warning("skipping unreadable file %s: %s", rel, exc)
            continue
        content = data.decode("utf-8", errors="replace")
        tech = (row or {}).get("technology") or guess_technology(rel, content)
        if tech is None:
            continue
        meta = (row or {}).get("repo_meta")
        if meta is not None and reference_date is not None:
            meta.status = classify_repo_status(meta, reference_date)
        entries.append(
            CorpusEntry(
                path=rel,
                technology_hint=tech,
                content=content,
                content_hash=sha256_hex(data),
                repo_meta=meta,
                confidence=classify_confidence(content, tech, properties=rel.lower().endswith(".properties")),
                root=str(root_p),
                annotations=dict((row or {}).get("annotations") or {}),
            )
        )
    return entries


def dedupe(entries: list[CorpusEntry]) -> list[CorpusEntry]:
    """Drop repeats of an (owner, repo, path) triple or a content hash; first wins."""
    seen_triples: set[tuple[str | None, str | None, str]] = set()
    seen_hashes: set[str] = set()
    out: list[CorpusEntry] = []
    for e in entries:
        triple = (
            e.repo_meta.owner if e.repo_meta else None,
            e.repo_meta.repo if e.repo_meta else None,
            e.path,
        )
        if triple in seen_triples or e.content_hash in seen_hashes:
            continue
        seen_triples.add(triple)
        seen_hashes.add(e.content_hash)
        out.append(e)
    return out


def default_reference_date(entries: list[CorpusEntry]) -> dt.date | None:
    """Latest last_push in the corpus, a data-derived stand-in for "today"."""
    dates = [e.repo_meta.last_push for e in entries if e.repo_meta]
    return max(dates) if dates else None


def entry_from_path(
    path: str | os.PathLike, root: str | os.PathLike | None = None, technology: str | None = None
) -> CorpusEntry:
    """Build a CorpusEntry for one file outside a corpus walk."""
    p = Path(path)
    root_p = Path(root) if root is not None else p.parent
    rel = p.resolve().relative_to(root_p.resolve()).as_posix()
    data = p.read_bytes()
    content = data.decode("utf-8", errors="replace")
    tech = technology or guess_technology(rel, content)
    if tech is None:
        raise ValueError(f"{rel}: cannot determine technology")
    return CorpusEntry(
        path=rel,
        technology_hint=tech,
        content=content,
        content_hash=sha256_hex(data),
        confidence=classify_confidence(content, tech, properties=rel.lower().endswith(".properties")),
        root=str(root_p),
    )
