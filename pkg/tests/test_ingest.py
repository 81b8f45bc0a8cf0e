import datetime as dt
import shutil
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from conftest import FIXTURES, METRICS_CORPUS
from cryptoscope.ingest import (
    CorpusEntry,
    CorpusError,
    ManifestError,
    RepoMeta,
    classify_confidence,
    classify_repo_status,
    dedupe,
    guess_technology,
    load_corpus,
    read_manifest,
    sha256_hex,
    status_stratum,
)

REF = dt.date(2025, 6, 1)


def _digests():
    out = {}
    for line in (FIXTURES / "ingest_digests.sha256").read_text().splitlines():
        digest, path = line.split(maxsplit=1)
        out[path] = digest
    return out


def test_empty_directory(tmp_path):
    assert load_corpus(tmp_path) == []


def test_unreadable_root_is_fatal(tmp_path):
    with pytest.raises(CorpusError):
        load_corpus(tmp_path / "missing")


def test_identical_files_share_hash(tmp_path):
    text = "server { listen 443 ssl; ssl_certificate a.crt; }\n"
    for d in ("one", "two"):
        (tmp_path / d).mkdir()
        (tmp_path / d / "nginx.conf").write_text(text)
    entries = load_corpus(tmp_path)
    assert [e.path for e in entries] == ["one/nginx.conf", "two/nginx.conf"]
    assert entries[0].content_hash == entries[1].content_hash


def test_five_file_corpus_matches_sha256sum_digests():
    entries = load_corpus(FIXTURES / "ingest_corpus")
    assert {e.path: e.content_hash for e in entries} == _digests()
    techs = {e.path: e.technology_hint for e in entries}
    assert techs["legacy/httpd.conf"] == "apache"
    assert techs["web/nginx/default.conf"] == "nginx"
    assert techs["svc/src/main/resources/application-dev.properties"] == "springboot"


def test_unreadable_file_is_skipped_with_warning(tmp_path, monkeypatch):
    (tmp_path / "nginx.conf").write_text("server { listen 443 ssl; }\n")
    (tmp_path / "default.conf").write_text("server {}\n")
    real = Path.read_bytes

    def fake(self):
        if self.name == "default.conf":
            raise PermissionError(13, "Permission denied")
        return real(self)

    monkeypatch.setattr(Path, "read_bytes", fake)
    warnings = []
    entries = load_corpus(tmp_path, warnings=warnings)
    assert [e.path for e in entries] == ["nginx.conf"]
    assert warnings and "default.conf" in warnings[0]


def test_manifest_joins_metadata_by_path():
    entries = load_corpus(METRICS_CORPUS, METRICS_CORPUS / "manifest.csv", REF)
    by_path = {e.path: e for e in entries}
    assert by_path["beta/apache/httpd.conf"].repo_meta.status == "archived"
    assert by_path["gamma/nginx/nginx.conf"].repo_meta.status == "dormant"
    assert by_path["alpha/nginx/nginx.conf"].repo_meta.status == "active"
    assert by_path["alpha/nginx/nginx.conf"].annotations == {"sensitivity": "high"}
    assert by_path["delta/apache/site.conf"].repo_meta is None


def test_malformed_manifest_names_line(tmp_path):
    m = tmp_path / "m.csv"
    m.write_text("path,owner,repo,archived,last_push\na.conf,o,r,maybe,2024-01-01\n")
    with pytest.raises(ManifestError) as exc:
        read_manifest(m)
    assert exc.value.line == 2


def test_jsonl_manifest(tmp_path):
    m = tmp_path / "m.jsonl"
    m.write_text('{"path": "a/nginx.conf", "owner": "o", "repo": "r", "archived": true, "last_push": "2024-01-01"}\n')
    meta = read_manifest(m)["a/nginx.conf"]["repo_meta"]
    assert meta.archived_flag is True and meta.last_push == dt.date(2024, 1, 1)


def test_jsonl_manifest_bad_json(tmp_path):
    m = tmp_path / "m.jsonl"
    m.write_text('{"path": "a"}\n{oops\n')
    with pytest.raises(ManifestError) as exc:
        read_manifest(m)
    assert exc.value.line == 2


# -- dedupe -------------------------------------------------------------------


def _entry(path, data, owner=None):
    meta = RepoMeta(owner, "r", False, REF) if owner else None
    return CorpusEntry(path, "nginx", data, sha256_hex(data.encode()), meta)


def test_dedupe_empty():
    assert dedupe([]) == []


def test_dedupe_same_hash_different_paths():
    assert len(dedupe([_entry("a.conf", "x"), _entry("b.conf", "x")])) == 1


def test_dedupe_seven_entry_fixture():
    entries = load_corpus(FIXTURES / "dedupe_corpus")
    assert len(entries) == 7
    survivors = dedupe(entries)
    assert [e.path for e in survivors] == [
        "a/httpd.conf",
        "a/nginx/default.conf",
        "a/nginx/nginx.conf",
        "c/application-dev.properties",
        "c/application.yml",
    ]


def test_dedupe_triple_first_wins():
    a = _entry("x.conf", "one", owner="o")
    b = _entry("x.conf", "two", owner="o")
    c = _entry("x.conf", "three", owner="p")
    assert dedupe([a, b, c]) == [a, c]


@given(st.lists(st.tuples(st.sampled_from("abc"), st.sampled_from("xyz"), st.sampled_from([None, "o1", "o2"]))))
def test_dedupe_idempotent(spec):
    entries = [_entry(p + ".conf", d, owner) for p, d, owner in spec]
    once = dedupe(entries)
    assert dedupe(once) == once
    assert len({e.content_hash for e in once}) == len(once)


@given(st.binary(max_size=256))
def test_hash_is_lowercase_sha256(data):
    h = sha256_hex(data)
    assert len(h) == 64 and h == h.lower()
    assert h == sha256_hex(bytes(data))


# -- confidence ----------------------------------------------------------------


def test_confidence_nginx_markers():
    text = "server {\n    listen 443 ssl;\n    ssl_certificate /etc/ssl/a.crt;\n}\n"
    assert classify_confidence(text, "nginx") >= 0.9


def test_confidence_empty():
    assert classify_confidence("", "nginx") == 0.0


def test_confidence_prose():
    text = "This project serves web pages. See the docs folder for deployment notes.\n"
    assert classify_confidence(text, "nginx") < 0.5


@given(st.text(max_size=200), st.sampled_from(["nginx", "apache", "springboot", "unknown"]))
def test_confidence_bounded_and_deterministic(text, hint):
    s = classify_confidence(text, hint)
    assert 0.0 <= s <= 1.0
    assert s == classify_confidence(text, hint)


# -- repo status ---------------------------------------------------------------


def test_status_archived_flag_dominates():
    assert classify_repo_status(RepoMeta("o", "r", True, REF - dt.timedelta(days=1)), REF) == "archived"


def test_status_dormant_after_three_years():
    assert classify_repo_status(RepoMeta("o", "r", False, dt.date(2022, 6, 1)), REF) == "dormant"


def test_status_active_one_month():
    assert classify_repo_status(RepoMeta("o", "r", False, dt.date(2025, 5, 1)), REF) == "active"


def test_status_future_push_rejected():
    with pytest.raises(ValueError):
        classify_repo_status(RepoMeta("o", "r", False, dt.date(2025, 7, 1)), REF)


def test_status_window_boundary():
    # exactly 24 months back is still inside the window
    assert classify_repo_status(RepoMeta("o", "r", False, dt.date(2023, 6, 1)), REF) == "active"
    assert classify_repo_status(RepoMeta("o", "r", False, dt.date(2023, 5, 31)), REF) == "dormant"


@given(st.booleans(), st.dates(max_value=REF))
def test_status_trichotomy(archived, pushed):
    status = classify_repo_status(RepoMeta("o", "r", archived, pushed), REF)
    assert status in ("active", "archived", "dormant")
    assert status_stratum(status) in ("active", "archived_or_dormant")


@pytest.mark.parametrize(
    "path,content,tech",
    [
        ("etc/nginx/sites/app.conf", "", "nginx"),
        ("ssl.conf", "", "nginx"),
        ("conf/httpd.conf", "", "apache"),
        ("sites/site.conf", "<VirtualHost *:443>\n</VirtualHost>\n", "apache"),
        ("src/application-prod.yaml", "", "springboot"),
        ("src/misc.conf", "", None),
        ("README.md", "", None),
    ],
)
def test_filename_heuristics(path, content, tech):
    assert guess_technology(path, content) == tech


def test_corpus_order_is_sorted(tmp_path):
    src = FIXTURES / "ingest_corpus"
    dst = tmp_path / "c"
    shutil.copytree(src, dst)
    paths = [e.path for e in load_corpus(dst)]
    assert paths == sorted(paths)
