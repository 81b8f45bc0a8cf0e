from __future__ import annotations

import importlib.util
import json
import sys
from pathlib import Path

import pytest

from cryptoscope.ingest import entry_from_path
from cryptoscope.normalize import load_mappings, normalize
from cryptoscope.parsers import extract_contexts
from cryptoscope.pipeline import RunConfig, build_inventory

TESTS = Path(__file__).resolve().parent
FIXTURES = TESTS / "fixtures"
sys.path.insert(0, str(TESTS))

METRICS_CORPUS = FIXTURES / "metrics_corpus"
METRICS_REF_DATE = "2025-06-01"

# every corpus-shaped fixture directory, used by the provenance and determinism checks
CORPUS_ROOTS = [
    FIXTURES / "golden",
    FIXTURES / "convergence",
    FIXTURES / "metrics_corpus",
    FIXTURES / "shape_corpus",
    FIXTURES / "pci",
    FIXTURES / "ingest_corpus",
    FIXTURES / "verify" / "baseline",
    FIXTURES / "verify" / "regressed",
    FIXTURES / "verify" / "improved",
]


def load_oracle(name: str):
    path = TESTS / "oracles" / f"{name}.py"
    spec = importlib.util.spec_from_file_location(f"_oracle_{name}", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def utms_from_text(tmp_path: Path, rel: str, text: str, tech: str):
    """Parse and normalize an inline config; returns (ics, utms)."""
    p = tmp_path / rel
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text, encoding="utf-8")
    entry = entry_from_path(p, root=tmp_path, technology=tech)
    ics = extract_contexts(entry, tmp_path)
    spec = load_mappings()[tech]
    return ics, [normalize(ic, spec) for ic in ics]


def utm_from_text(tmp_path: Path, text: str, tech: str = "nginx", rel: str | None = None):
    rel = rel or {"nginx": "nginx/t.conf", "apache": "t.conf", "springboot": "application.properties"}[tech]
    _, utms = utms_from_text(tmp_path, rel, text, tech)
    assert len(utms) == 1
    return utms[0]


def inventory_for(root: Path, **kw) -> dict:
    kw.setdefault("confidence_threshold", 0.0)
    return build_inventory(RunConfig(root=str(root), **kw))


def metrics_inventory() -> dict:
    import datetime as dt

    return build_inventory(
        RunConfig(
            root=str(METRICS_CORPUS),
            manifest=str(METRICS_CORPUS / "manifest.csv"),
            reference_date=dt.date.fromisoformat(METRICS_REF_DATE),
        )
    )


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


@pytest.fixture
def cli(tmp_path):
    """Run the CLI in-process; returns (exit_code, out_dir)."""
    from cryptoscope.cli import main

    def run(*args: str, out: Path | None = None):
        out = out or tmp_path / "out"
        code = main([*args, "--out", str(out)])
        return code, out

    return run


def _directive_token(tech: str, native: str) -> str:
    token = native.split()[0]
    if tech == "springboot":
        # YAML nests keys, so only the leaf segment is on the line
        token = native.rsplit(".", 1)[-1]
    return token


def provenance_report(roots=CORPUS_ROOTS):
    """Check every populated UTM field of every fixture context.

    Returns (fields_checked, problems). A field counts as populated when it
    differs from the empty model or carries provenance; its provenance source
    line must name the native directive.
    """
    from cryptoscope.normalize import UnifiedTlsModel, utm_fields

    blank = UnifiedTlsModel()
    checked, problems = 0, []
    for root in roots:
        inv = inventory_for(root)
        for rec in inv["records"]:
            for utm_d in rec["_endpoint_utms"]:
                utm = UnifiedTlsModel.from_dict(utm_d)
                populated = {f for f in utm_fields() if utm.get(f) != blank.get(f)} | set(utm.provenance)
                for fld in sorted(populated):
                    checked += 1
                    prov = utm.provenance.get(fld)
                    if prov is None:
                        problems.append((utm.context_id, fld, "no provenance"))
                        continue
                    lines = (root / prov.source.file).read_text(encoding="utf-8").splitlines()
                    line = lines[prov.source.line - 1]
                    token = _directive_token(utm.technology, prov.native_directive)
                    if utm.technology == "apache":
                        ok = token.lower() in line.lower()
                    else:
                        ok = token in line
                    if not ok:
                        problems.append((utm.context_id, fld, line))
    return checked, problems


def cipher_oracle_mismatches():
    """Compare every shipped cipher_suites.tsv row against the frozen oracle.

    Returns (rows_checked, mismatches).
    """
    from cryptoscope.crypto import _read_tsv

    oracle = {k.upper(): v for k, v in read_json(FIXTURES / "cipher_oracle.json").items()}
    rows = _read_tsv("cipher_suites.tsv")
    bad = []
    for row in rows:
        want = oracle.get(row["name"].upper())
        if want is None:
            bad.append((row["name"], "absent from oracle"))
            continue
        got = {k: row[k] for k in ("kex", "auth", "cipher", "mode", "hash")}
        got["aead"] = row["aead"].strip().lower() == "true"
        exp = {k: want[k] for k in ("kex", "auth", "cipher", "mode", "hash", "aead")}
        if got != exp:
            bad.append((row["name"], got, exp))
    return len(rows), bad


def metrics_diff(got, want, tol: float = 1e-9, path: str = "") -> list[str]:
    """Paths where two metric trees differ; floats compare within ``tol``."""
    if isinstance(want, dict) and isinstance(got, dict):
        out = [f"{path}/{k}: missing" for k in want.keys() - got.keys()]
        out += [f"{path}/{k}: unexpected" for k in got.keys() - want.keys()]
        for k in want.keys() & got.keys():
            out += metrics_diff(got[k], want[k], tol, f"{path}/{k}")
        return out
    if isinstance(want, list) and isinstance(got, list):
        if len(got) != len(want):
            return [f"{path}: length {len(got)} != {len(want)}"]
        return [d for i, (g, w) in enumerate(zip(got, want)) for d in metrics_diff(g, w, tol, f"{path}[{i}]")]
    if isinstance(want, float) or isinstance(got, float):
        if got is None or want is None or isinstance(got, bool) or abs(got - want) > tol:
            return [f"{path}: {got!r} != {want!r}"]
        return []
    return [] if got == want else [f"{path}: {got!r} != {want!r}"]


def oracle_metrics(inv: dict) -> dict:
    from cryptoscope.pipeline import strip_private

    return load_oracle("metrics_oracle").compute(json.loads(json.dumps(strip_private(inv))))


# -- acceptance reporting ------------------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    n, title = marker.args
    ACCEPTANCE_RESULTS[n] = ("FAIL" if call.excinfo is not None else "PASS", title)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        status, title = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {title}")
