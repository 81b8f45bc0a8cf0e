import pytest
from hypothesis import given, strategies as st

from conftest import FIXTURES, cipher_oracle_mismatches, read_json, utm_from_text
from cryptoscope.crypto import (
    VERDICTS,
    CipherToken,
    classify_cert_chain,
    classify_cert_origin,
    classify_context_kex,
    classify_curve,
    classify_hostname,
    classify_storage,
    classify_suite,
    classify_tokens,
    detect_hsm,
    detect_legacy_presets,
    detect_mixed_strength,
    is_non_production,
    suite_components,
    tokenize_cipher_string,
    weak_tokens,
)
from cryptoscope.normalize import UnifiedTlsModel


def _suite(name):
    return classify_suite(CipherToken(name))


def _weak_families(raw):
    return {f for c in weak_tokens(classify_tokens(tokenize_cipher_string(raw))) for f in c.weak_flags}


# -- tokenizer -----------------------------------------------------------------------


def test_tokenize_legacy_preset_string():
    toks = tokenize_cipher_string("HIGH:!aNULL:!MD5:@STRENGTH")
    assert [(t.text, t.negated, t.kind) for t in toks] == [
        ("HIGH", False, "preset"),
        ("aNULL", True, "preset"),
        ("MD5", True, "preset"),
        ("@STRENGTH", False, "directive_modifier"),
    ]


def test_tokenize_empty():
    assert tokenize_cipher_string("") == []


def test_tokenize_two_suites():
    toks = tokenize_cipher_string("ECDHE-RSA-AES128-GCM-SHA256:ECDHE-RSA-AES256-GCM-SHA384")
    assert [t.kind for t in toks] == ["suite", "suite"]


def test_tokenize_plus_is_affirmative():
    (t,) = tokenize_cipher_string("+RC4")
    assert not t.negated and t.op == "+"


@given(st.lists(st.from_regex(r"[!+-]?[A-Za-z0-9@]{1,10}", fullmatch=True), max_size=8))
def test_tokenize_preserves_pieces(pieces):
    toks = tokenize_cipher_string(":".join(pieces))
    assert [t.display() for t in toks] == pieces
    for t in toks:
        assert t.negated == (t.op in ("!", "-"))


# -- suite classification --------------------------------------------------------------


def test_ecdhe_gcm():
    c = _suite("ECDHE-RSA-AES128-GCM-SHA256")
    assert (c.kex_category, c.aead, c.weak_flags, c.quantum_verdict) == ("ecdhe_dhe", True, frozenset(), "vulnerable_fs")


def test_rsa_kex():
    c = _suite("AES256-SHA")
    assert (c.kex_category, c.aead, c.quantum_verdict) == ("rsa_kex", False, "vulnerable_no_fs")


def test_tls13_suite():
    c = _suite("TLS_AES_128_GCM_SHA256")
    assert (c.kex_category, c.aead, c.quantum_verdict) == ("tls13_suite", True, "indeterminate")


def test_rc4_md5():
    c = _suite("RC4-MD5")
    assert c.weak_flags == {"RC4", "MD5"} and c.aead is False


def test_unparseable_suite():
    c = _suite("NOT-A-REAL-SUITE")
    assert (c.kex_category, c.quantum_verdict) == ("unknown", "indeterminate")
    assert c.warnings


def test_sha384_is_not_weak():
    assert _suite("ECDHE-RSA-AES256-SHA384").weak_flags == frozenset()


def test_cipher_table_matches_oracle():
    n, bad = cipher_oracle_mismatches()
    assert n >= 60
    assert bad == []


def test_grammar_agrees_with_oracle_beyond_table():
    # the fallback name grammar, not just the table, against every oracle entry
    from cryptoscope import crypto

    oracle = read_json(FIXTURES / "cipher_oracle.json")
    bad = []
    for name, want in oracle.items():
        key = name.upper()
        comp = crypto._parse_iana_name(key) if key.startswith(("TLS_", "SSL_")) else crypto._parse_openssl_name(key)
        if comp is None:
            bad.append(name)
            continue
        got = (comp.kex, comp.auth, comp.cipher, comp.mode, comp.mac_or_hash, comp.mode in crypto.AEAD_MODES)
        if got != (want["kex"], want["auth"], want["cipher"], want["mode"], want["hash"], want["aead"]):
            bad.append(name)
    assert bad == []


@given(st.sampled_from(sorted(read_json(FIXTURES / "cipher_oracle.json"))))
def test_verdict_invariants(name):
    c = _suite(name)
    assert c.quantum_verdict in VERDICTS
    expected = {"rsa_kex": "vulnerable_no_fs", "ecdhe_dhe": "vulnerable_fs", "pqc_hybrid": "resistant_hybrid"}
    assert c.quantum_verdict == expected.get(c.kex_category, "indeterminate")
    if c.weak_flags:
        assert not c.aead


@given(st.text(max_size=30))
def test_classify_total(name):
    c = classify_suite(CipherToken(name or "x"))
    assert c.quantum_verdict in VERDICTS


# -- weak tokens and presets -----------------------------------------------------------------


def test_negated_presets_are_not_weak():
    assert _weak_families("HIGH:!aNULL:!MD5:@STRENGTH") == set()


def test_rc4_md5_weak():
    assert _weak_families("RC4-MD5") == {"RC4", "MD5"}


@given(st.lists(st.sampled_from(["RC4-MD5", "DES-CBC3-SHA", "NULL-SHA", "MD5", "RC4", "EXPORT", "aNULL", "3DES"]), min_size=1))
def test_negation_exclusion(names):
    assert _weak_families(":".join("!" + n for n in names)) == set()


def test_legacy_presets():
    toks = tokenize_cipher_string("HIGH:!aNULL:!MD5:@STRENGTH")
    assert detect_legacy_presets(toks) == {"HIGH", "!aNULL", "!MD5"}


def test_legacy_presets_explicit_suites():
    assert detect_legacy_presets(tokenize_cipher_string("ECDHE-RSA-AES128-GCM-SHA256:AES256-SHA")) == set()


def test_legacy_presets_enull():
    assert detect_legacy_presets(tokenize_cipher_string("!eNULL")) == {"!eNULL"}


def test_mixed_strength():
    mixed = classify_tokens(tokenize_cipher_string("ECDHE-RSA-AES128-GCM-SHA256:RC4-MD5"))
    assert detect_mixed_strength(mixed)
    assert not detect_mixed_strength(classify_tokens(tokenize_cipher_string("ECDHE-RSA-AES128-GCM-SHA256")))
    assert not detect_mixed_strength(classify_tokens(tokenize_cipher_string("RC4-MD5:DES-CBC3-SHA")))


# -- context key exchange ------------------------------------------------------------------


def _ctx(ciphers=None, curves=None, protocols=None):
    utm = UnifiedTlsModel(tls_enabled=True)
    if ciphers is not None:
        utm.ciphers.suite_tokens = tokenize_cipher_string(ciphers)
    if curves is not None:
        utm.ciphers.ecdh_curves = curves
    utm.protocols = protocols
    return utm


def test_context_hybrid_curve():
    assert classify_context_kex(_ctx("AES256-SHA", ["X25519MLKEM768"])) == "pqc_hybrid"


def test_context_rsa_only():
    assert classify_context_kex(_ctx("AES128-SHA:AES256-SHA256", protocols={"TLSv1.2"})) == "rsa_kex"


def test_context_tls13_default():
    assert classify_context_kex(_ctx(protocols={"TLSv1.3"})) == "ecdhe_dhe"


def test_context_fs_beats_rsa():
    assert classify_context_kex(_ctx("AES128-SHA:ECDHE-RSA-AES128-SHA", protocols={"TLSv1.2"})) == "ecdhe_dhe"


def test_context_preset_only_tls12_unknown():
    assert classify_context_kex(_ctx("HIGH:!aNULL", protocols={"TLSv1.2"})) == "unknown"


# -- curves, keys, certificates, storage, hostnames -----------------------------------------------


@pytest.mark.parametrize(
    "name,cat",
    [("secp384r1", "classical_named"), ("prime256v1", "classical_named"), ("X25519", "classical_named"),
     ("X25519MLKEM768", "pqc_hybrid"), ("SecP256r1MLKEM768", "pqc_hybrid"), ("auto", "auto"),
     ("brainpoolP256r1", "classical_named"), ("sect163k1", "unknown")],
)
def test_curves(name, cat):
    assert classify_curve(name) == cat


@pytest.mark.parametrize(
    "key,kind",
    [("pkcs11:token=bank;object=tlskey", "pkcs11_uri"), ("/etc/nginx/ssl/key.pem", "filesystem"),
     ("${TLS_KEY}", "env_var"), ("/run/secrets/tls_key", "docker_secret"), ("certs/k.pem", "relative")],
)
def test_detect_hsm(key, kind):
    utm = UnifiedTlsModel(tls_enabled=True)
    utm.certificates.key_path = key
    assert detect_hsm(utm) == kind


def test_engine_directive_is_engine_ref(tmp_path):
    text = "server { listen 443 ssl; ssl_certificate a.crt; ssl_certificate_key engine:pkcs11:id_01; }\n"
    assert detect_hsm(utm_from_text(tmp_path, text)) == "engine_ref"


@pytest.mark.parametrize(
    "path,origin",
    [("/etc/letsencrypt/live/example.org/fullchain.pem", "lets_encrypt_acme"),
     ("/etc/ssl/certs/ssl-cert-snakeoil.pem", "self_signed_indicator"),
     ("$CERT_PATH", "env_var"), ("/etc/ssl/site.crt", "other")],
)
def test_cert_origin(path, origin):
    assert classify_cert_origin(path) == origin


@pytest.mark.parametrize(
    "path,kind",
    [("/etc/letsencrypt/live/a/fullchain.pem", "fullchain_bundle"), ("/etc/ssl/cert.pem", "leaf_only"),
     ("/etc/ssl/example.com.chained.crt", "fullchain_bundle"), ("/etc/ssl/ca-bundle.crt", "fullchain_bundle")],
)
def test_cert_chain(path, kind):
    assert classify_cert_chain(path) == kind


@pytest.mark.parametrize(
    "path,kind",
    [("/etc/nginx/certs/a.pem", "nginx_dir"), ("certs/a.pem", "relative"), ("/run/secrets/tls_cert", "docker_secrets"),
     ("/etc/letsencrypt/live/a/privkey.pem", "letsencrypt"), ("/etc/pki/tls/a.key", "ssl_pki"),
     ("/srv/tls/a.pem", "opt_srv"), ("${KEY}", "env_var"), ("/home/u/a.pem", "other_absolute")],
)
def test_storage(path, kind):
    assert classify_storage(path) == kind


@pytest.mark.parametrize(
    "name,cat",
    [("api.bank.sg", "domain_like"), ("_", "catch_all"), ("example.com", "example_domain"), ("", "empty"),
     (None, "empty"), ("localhost", "localhost"), ("127.0.0.1", "loopback_ip"), ("*", "wildcard_only"),
     ("$host", "env_var"), ("shop.test", "example_domain"), ("intranet", "other")],
)
def test_hostnames(name, cat):
    assert classify_hostname(name) == cat
    assert is_non_production(cat) == (cat != "domain_like")


@given(st.text(max_size=40))
def test_partitions_are_total(s):
    from cryptoscope.crypto import HOSTNAME_CATEGORIES, STORAGE_PATTERNS

    assert classify_hostname(s) in HOSTNAME_CATEGORIES
    assert classify_storage(s) in STORAGE_PATTERNS


def test_suite_components_case_insensitive():
    assert suite_components("ecdhe-rsa-aes128-gcm-sha256") == suite_components("ECDHE-RSA-AES128-GCM-SHA256")
