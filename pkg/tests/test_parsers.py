from types import SimpleNamespace

import pytest
from hypothesis import given, settings, strategies as st

import golden
from conftest import FIXTURES, utms_from_text
from cryptoscope.ingest import entry_from_path
from cryptoscope.parsers import (
    ALLOWLISTS,
    MAX_FILE_BYTES,
    FileTooLarge,
    ParseError,
    active_profiles_from,
    extract_contexts,
    merge_profiles,
    parse_apache,
    parse_nginx,
    parse_springboot,
    resolve_apache_contexts,
    resolve_nginx_contexts,
    tree_shape,
)
from cryptoscope.parsers import apache as apache_mod
from cryptoscope.parsers import nginx as nginx_mod
from cryptoscope.parsers.nginx import count_server_blocks


def _e(text, path="t.conf"):
    return SimpleNamespace(path=path, content=text)


def _ics(tmp_path, text, tech, rel=None):
    rel = rel or {"nginx": "nginx/t.conf", "apache": "t.conf", "springboot": "application.yml"}[tech]
    ics, _ = utms_from_text(tmp_path, rel, text, tech)
    return ics


# -- golden suite ---------------------------------------------------------------


@pytest.mark.parametrize("tech,case", golden.all_cases(), ids=lambda v: getattr(v, "name", v))
def test_golden(tech, case):
    expected = golden.expected_path(tech, case).read_text(encoding="utf-8")
    assert golden.render(tech, case) == expected


@pytest.mark.parametrize("tech", golden.TECHS)
def test_golden_coverage(tech):
    names = {golden.expected_path(tech, c).stem.split(".")[0] for c in golden.cases(tech)}
    assert len(names) >= 12
    required = {"minimal", "inherited", "multi_context", "malformed"}
    assert required <= names
    assert {"legacy_ssl_on", "legacy_protocols", "legacy"} & names


# -- nginx ----------------------------------------------------------------------


def test_nginx_minimal_tree():
    tree = parse_nginx(_e("server { listen 443 ssl; }"))
    assert len(tree) == 1 and tree[0].name == "server" and tree[0].block
    (listen,) = tree[0].children
    assert listen.name == "listen" and listen.args == ["443", "ssl"]
    assert (listen.source.line, listen.source.column) == (1, 10)


def test_nginx_http_scope_directive():
    tree = parse_nginx(_e("http { ssl_protocols TLSv1.2 TLSv1.3; server { listen 443 ssl; } }"))
    http = tree[0]
    assert [c.name for c in http.children] == ["ssl_protocols", "server"]


def test_nginx_three_servers_in_order():
    path = FIXTURES / "golden" / "nginx" / "multi_context.conf"
    tree = parse_nginx(_e(path.read_text(), "multi_context.conf"))
    servers = [node for node, _ in nginx_mod.iter_servers(tree)]
    assert len(servers) == 3
    lines = [s.source.line for s in servers]
    assert lines == sorted(lines)


def test_nginx_unbalanced_braces():
    with pytest.raises(ParseError) as exc:
        parse_nginx(_e("http {\n  server {\n    listen 443 ssl;\n  }\n"))
    assert exc.value.line == 1


def test_nginx_stray_close():
    with pytest.raises(ParseError) as exc:
        parse_nginx(_e("server { }\n}\n"))
    assert exc.value.line == 2


def test_nginx_size_bound():
    with pytest.raises(FileTooLarge):
        parse_nginx(_e("#" * (MAX_FILE_BYTES + 1)))


def test_nginx_plaintext_server(tmp_path):
    (ic,) = _ics(tmp_path, "server { listen 80; server_name a.io; }\n", "nginx")
    assert ic.tls_enabled is False


def test_nginx_inherited_depth(tmp_path):
    text = "http {\n  ssl_protocols TLSv1.2;\n  server {\n    listen 443 ssl;\n  }\n}\n"
    (ic,) = _ics(tmp_path, text, "nginx")
    dv = ic.directives["ssl_protocols"]
    assert dv.value == "TLSv1.2" and dv.depth == 1 and dv.source.line == 2


def test_nginx_override_nearest_scope(tmp_path):
    text = (
        "http {\n  ssl_ciphers HIGH;\n  server {\n    listen 443 ssl;\n"
        "    ssl_ciphers ECDHE-RSA-AES128-GCM-SHA256;\n  }\n}\n"
    )
    (ic,) = _ics(tmp_path, text, "nginx")
    dv = ic.directives["ssl_ciphers"]
    assert dv.value == "ECDHE-RSA-AES128-GCM-SHA256" and dv.depth == 0


def test_nginx_legacy_ssl_on(tmp_path):
    (ic,) = _ics(tmp_path, "server { listen 443; ssl on; }\n", "nginx")
    assert ic.tls_enabled is True


def test_nginx_duplicate_in_scope_last_wins(tmp_path):
    text = "server {\n listen 443 ssl;\n ssl_protocols TLSv1;\n ssl_protocols TLSv1.2;\n}\n"
    (ic,) = _ics(tmp_path, text, "nginx")
    assert ic.directives["ssl_protocols"].value == "TLSv1.2"
    assert any("shadow" in w for w in ic.warnings)


def test_nginx_include_resolved_relative(tmp_path):
    (tmp_path / "nginx").mkdir()
    (tmp_path / "nginx" / "tls.inc").write_text("ssl_protocols TLSv1.3;\n")
    (ic,) = _ics(tmp_path, "server {\n listen 443 ssl;\n include tls.inc;\n}\n", "nginx")
    dv = ic.directives["ssl_protocols"]
    assert dv.value == "TLSv1.3" and dv.source.file == "nginx/tls.inc"


def test_nginx_missing_include_warns(tmp_path):
    (ic,) = _ics(tmp_path, "server {\n listen 443 ssl;\n include /nope/*.conf;\n}\n", "nginx")
    assert ic.tls_enabled
    assert any("include" in w for w in ic.warnings)


def test_nginx_variables_kept_raw(tmp_path):
    (ic,) = _ics(tmp_path, "server { listen 443 ssl; ssl_certificate $cert; }\n", "nginx")
    assert ic.directives["ssl_certificate"].value == "$cert"


# -- apache -----------------------------------------------------------------------


def test_apache_minimal_container():
    tree = parse_apache(_e("<VirtualHost *:443>\nSSLEngine on\n</VirtualHost>\n"))
    assert len(tree) == 1 and tree[0].block
    assert [c.name for c in tree[0].children] == ["SSLEngine"]


def test_apache_protocol_args():
    (node,) = parse_apache(_e("SSLProtocol all -SSLv3 -TLSv1\n"))
    assert node.args == ["all", "-SSLv3", "-TLSv1"]


def test_apache_mismatched_close():
    with pytest.raises(ParseError) as exc:
        parse_apache(_e("<VirtualHost *:443>\nSSLEngine on\n</Directory>\n"))
    assert exc.value.line == 3


def test_apache_unterminated_container():
    with pytest.raises(ParseError):
        parse_apache(_e("<VirtualHost *:443>\nSSLEngine on\n"))


def test_apache_global_inheritance(tmp_path):
    text = "SSLCipherSuite HIGH:!aNULL\n<VirtualHost *:443>\n  SSLEngine on\n</VirtualHost>\n"
    (ic,) = _ics(tmp_path, text, "apache")
    dv = ic.directives["SSLCipherSuite"]
    assert dv.value == "HIGH:!aNULL" and dv.depth == 1


def test_apache_engine_off(tmp_path):
    (ic,) = _ics(tmp_path, "<VirtualHost *:443>\n  SSLEngine off\n</VirtualHost>\n", "apache")
    assert ic.tls_enabled is False


def test_apache_one_tls_one_plaintext(tmp_path):
    text = (
        "<VirtualHost *:80>\n  ServerName a.io\n</VirtualHost>\n"
        "<VirtualHost *:443>\n  ServerName a.io\n  SSLEngine on\n</VirtualHost>\n"
    )
    ics = _ics(tmp_path, text, "apache")
    assert [ic.tls_enabled for ic in ics] == [False, True]


def test_apache_protocol_kept_raw(tmp_path):
    text = "<VirtualHost *:443>\n  SSLEngine on\n  SSLProtocol all -SSLv3\n</VirtualHost>\n"
    (ic,) = _ics(tmp_path, text, "apache")
    assert ic.directives["SSLProtocol"].value == "all -SSLv3"


def test_apache_case_insensitive_names(tmp_path):
    text = "<virtualhost *:443>\n  sslengine on\n  sslprotocol TLSv1.2\n</virtualhost>\n"
    (ic,) = _ics(tmp_path, text, "apache")
    assert ic.tls_enabled
    assert ic.directives["SSLProtocol"].value == "TLSv1.2"


# -- spring boot ---------------------------------------------------------------------


def test_properties_single_key():
    (doc,) = parse_springboot(_e("server.ssl.enabled=true\n", "application.properties"))
    assert list(doc.keys) == ["server.ssl.enabled"]
    assert doc.keys["server.ssl.enabled"].value == "true"


def test_yaml_two_documents():
    text = "server:\n  port: 8443\n---\nspring:\n  profiles: prod\nserver:\n  port: 443\n"
    docs = parse_springboot(_e(text, "application.yml"))
    assert len(docs) == 2
    assert docs[0].is_default and docs[1].profiles == ("prod",)


def test_yaml_list_joined():
    text = "server:\n  ssl:\n    enabled-protocols:\n      - TLSv1.2\n      - TLSv1.3\n"
    (doc,) = parse_springboot(_e(text, "application.yml"))
    assert doc.keys["server.ssl.enabled-protocols"].value == "TLSv1.2,TLSv1.3"


def test_yaml_malformed():
    with pytest.raises(ParseError) as exc:
        parse_springboot(_e("server:\n  ssl: [unclosed\n", "application.yml"))
    assert exc.value.line >= 2


def test_merge_last_wins():
    text = (
        "server:\n  ssl:\n    enabled-protocols: TLSv1.2\n---\n"
        "spring:\n  profiles: prod\nserver:\n  ssl:\n    enabled-protocols: TLSv1.3\n"
    )
    docs = parse_springboot(_e(text, "application.yml"))
    ic = merge_profiles(docs, ["prod"])
    assert ic.directives["server.ssl.enabled-protocols"].value == "TLSv1.3"
    assert ic.directives["server.ssl.enabled-protocols"].depth == 0


def test_merge_default_only():
    docs = parse_springboot(_e("server:\n  ssl:\n    key-store: a.p12\n", "application.yml"))
    ic = merge_profiles(docs, [])
    assert ic.tls_enabled and ic.directives["server.ssl.key-store"].value == "a.p12"


def test_merge_three_documents_overlay():
    text = (
        "server:\n  port: 8080\n  ssl:\n    key-store: base.p12\n    ciphers: A\n---\n"
        "spring:\n  profiles: one\nserver:\n  port: 8443\n  ssl:\n    ciphers: B\n---\n"
        "spring:\n  profiles: two\nserver:\n  ssl:\n    ciphers: C\n"
    )
    docs = parse_springboot(_e(text, "application.yml"))
    ic = merge_profiles(docs, ["one", "two"])
    got = {k: (v.value, v.depth) for k, v in ic.directives.items()}
    assert got == {
        "server.port": ("8443", 1),
        "server.ssl.key-store": ("base.p12", 2),
        "server.ssl.ciphers": ("C", 0),
    }


def test_merge_missing_profile_warns():
    docs = parse_springboot(_e("server:\n  ssl:\n    enabled: true\n", "application.yml"))
    ic = merge_profiles(docs, ["ghost"])
    assert any("ghost" in w for w in ic.warnings)


def test_active_profile_from_default_doc():
    path = FIXTURES / "golden" / "springboot" / "profiles" / "application.yml"
    docs = parse_springboot(_e(path.read_text(), "application.yml"))
    assert active_profiles_from(docs) == ["prod"]


def test_ssl_disabled_explicitly():
    docs = parse_springboot(_e("server.ssl.enabled=false\nserver.ssl.key-store=a.p12\n", "application.properties"))
    assert merge_profiles(docs).tls_enabled is False


# -- properties across every fixture ----------------------------------------------------


def _fixture_ics():
    for tech, case in golden.all_cases():
        root = golden.GOLDEN / tech
        entry = entry_from_path(case, root=root, technology=tech)
        try:
            yield tech, root, extract_contexts(entry, root)
        except (ParseError, FileTooLarge):
            continue


def _line(root, file, line):
    return (root / file).read_text(encoding="utf-8").splitlines()[line - 1]


def test_directive_sources_point_at_name():
    checked = 0
    for tech, root, ics in _fixture_ics():
        for ic in ics:
            for name, dv in ic.directives.items():
                text = _line(root, dv.source.file, dv.source.line)
                token = name.split()[0]
                if tech == "springboot":
                    token = name.rsplit(".", 1)[-1]
                hay, needle = (text.lower(), token.lower()) if tech == "apache" else (text, token)
                assert needle in hay, (ic.context_id, name, text)
                checked += 1
    assert checked > 100


def test_allowlist_closure():
    for tech, _, ics in _fixture_ics():
        for ic in ics:
            assert set(ic.directives) <= set(ALLOWLISTS[tech])


def test_nginx_context_count_conservation():
    for case in golden.cases("nginx"):
        entry = entry_from_path(case, root=case.parent, technology="nginx")
        try:
            tree = parse_nginx(entry)
        except ParseError:
            continue
        ics = resolve_nginx_contexts(tree, entry.path, case.parent)
        assert len(ics) == count_server_blocks(nginx_mod.expand_includes(tree, entry.path, case.parent))


@pytest.mark.parametrize("tech", ["nginx", "apache"])
def test_round_trip(tech):
    parse = parse_nginx if tech == "nginx" else parse_apache
    dump = nginx_mod.dump if tech == "nginx" else apache_mod.dump
    for case in golden.cases(tech):
        text = case.read_text(encoding="utf-8")
        try:
            tree = parse(_e(text, case.name))
        except ParseError:
            continue
        again = parse(_e(dump(tree), case.name))
        assert tree_shape(again) == tree_shape(tree), case.name


def test_parse_deterministic():
    for tech, case in golden.all_cases():
        assert golden.render(tech, case) == golden.render(tech, case)


# -- generated input ---------------------------------------------------------------------

_word = st.from_regex(r"[a-z_][a-z0-9_.]{0,8}", fullmatch=True)


@st.composite
def _nginx_block(draw, depth=0):
    lines = []
    for _ in range(draw(st.integers(0, 3))):
        if depth < 2 and draw(st.booleans()):
            lines.append(f"{draw(_word)} {{ {draw(_nginx_block(depth + 1))} }}")
        else:
            args = " ".join(draw(st.lists(_word, max_size=3)))
            lines.append(f"{draw(_word)} {args};")
    return "\n".join(lines)


@settings(max_examples=60)
@given(_nginx_block())
def test_nginx_generated_round_trip(text):
    tree = parse_nginx(_e(text))
    assert tree_shape(parse_nginx(_e(nginx_mod.dump(tree)))) == tree_shape(tree)


@settings(max_examples=60)
@given(st.text(alphabet="ab {};#\"'\n\\", max_size=40))
def test_nginx_garbage_never_crashes(text):
    try:
        parse_nginx(_e(text))
    except ParseError as exc:
        assert exc.line >= 1
