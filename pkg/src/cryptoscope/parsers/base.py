"""Shared parser types: syntax tree nodes, intermediate records, allowlists."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

MAX_FILE_BYTES = 4 * 1024 * 1024


class ParseError(Exception):
    """Syntax error at a known location."""

    def __init__(self, message: str, file: str, line: int, column: int = 1) -> None:
        self.file = file
        self.line = line
        self.column = column
        self.reason = message
        super().__init__(f"{file}:{line}:{column}: {message}")


class FileTooLarge(Exception):
    def __init__(self, file: str, size: int, limit: int = MAX_FILE_BYTES) -> None:
        self.file = file
        self.size = size
        self.limit = limit
        super().__init__(f"{file}: {size} bytes exceeds the {limit}-byte parse bound")


@dataclass(frozen=True)
class SourceLoc:
    file: str
    line: int
    column: int

    def to_dict(self) -> dict[str, Any]:
        return {"file": self.file, "line": self.line, "column": self.column}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SourceLoc:
        return cls(d["file"], int(d["line"]), int(d["column"]))


@dataclass
class DirectiveNode:
    name: str
    args: list[str]
    source: SourceLoc
    children: list[DirectiveNode] = field(default_factory=list)
    block: bool = False

    def shape(self) -> tuple:
        """Structure without source locations, for whitespace-insensitive equality."""
        return (self.name, tuple(self.args), self.block, tuple(c.shape() for c in self.children))


def tree_shape(nodes: list[DirectiveNode]) -> tuple:
    return tuple(n.shape() for n in nodes)


@dataclass(frozen=True)
class DirectiveValue:
    value: str
    source: SourceLoc
    depth: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {"value": self.value, "source": self.source.to_dict(), "inheritance_depth": self.depth}


@dataclass
class IntermediateConfig:
    """Vendor-shaped TLS directives of one context, inheritance already resolved."""

    technology: str
    context_id: str
    file: str
    ordinal: int
    label: str
    tls_enabled: bool
    directives: dict[str, DirectiveValue] = field(default_factory=dict)
    # every TLS listen endpoint; directives["listen"] holds the primary one
    endpoints: list[DirectiveValue] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "technology": self.technology,
            "context_id": self.context_id,
            "tls_enabled": self.tls_enabled,
            "directives": {k: self.directives[k].to_dict() for k in sorted(self.directives)},
            "endpoints": [e.to_dict() for e in self.endpoints],
            "warnings": list(self.warnings),
        }


def make_context_id(path: str, ordinal: int, label: str) -> str:
    return f"{path}#{ordinal}:{label}"


# Allowlisted native directives, grouped by category. "endpoint" carries
# context identity (port, hostname, TLS switch) on top of the ten posture
# categories.
NGINX_ALLOWLIST: dict[str, str] = {
    "ssl_protocols": "protocols",
    "ssl_ciphers": "ciphers",
    "ssl_certificate": "cert_key",
    "ssl_certificate_key": "cert_key",
    "ssl_dhparam": "cert_key",
    "ssl_engine": "cert_key",
    "ssl_verify_client": "client_auth",
    "ssl_verify_depth": "client_auth",
    "ssl_client_certificate": "trust",
    "ssl_trusted_certificate": "trust",
    "ssl_crl": "trust",
    "ssl_session_cache": "session",
    "ssl_session_timeout": "session",
    "ssl_session_tickets": "session",
    "ssl_stapling": "ocsp",
    "ssl_stapling_verify": "ocsp",
    "add_header": "hsts",
    "ssl_prefer_server_ciphers": "cipher_order",
    "ssl_ecdh_curve": "curves",
    "ssl_conf_command Groups": "curves",
    "ssl_conf_command Curves": "curves",
    "listen": "endpoint",
    "server_name": "endpoint",
    "ssl": "endpoint",
}

APACHE_ALLOWLIST: dict[str, str] = {
    "SSLProtocol": "protocols",
    "SSLCipherSuite": "ciphers",
    "SSLCipherSuite TLSv1.3": "ciphers",
    "SSLCertificateFile": "cert_key",
    "SSLCertificateKeyFile": "cert_key",
    "SSLCertificateChainFile": "cert_key",
    "SSLOpenSSLConfCmd DHParameters": "cert_key",
    "SSLCryptoDevice": "cert_key",
    "SSLVerifyClient": "client_auth",
    "SSLVerifyDepth": "client_auth",
    "SSLStrictSNIVHostCheck": "client_auth",
    "SSLCACertificateFile": "trust",
    "SSLCACertificatePath": "trust",
    "SSLCARevocationFile": "trust",
    "SSLCARevocationPath": "trust",
    "SSLSessionCache": "session",
    "SSLSessionCacheTimeout": "session",
    "SSLSessionTickets": "session",
    "SSLCompression": "session",
    "SSLUseStapling": "ocsp",
    "Header": "hsts",
    "SSLHonorCipherOrder": "cipher_order",
    "SSLOpenSSLConfCmd Curves": "curves",
    "SSLOpenSSLConfCmd Groups": "curves",
    "SSLOpenSSLConfCmd ECDHParameters": "curves",
    "VirtualHost": "endpoint",
    "ServerName": "endpoint",
    "SSLEngine": "endpoint",
}

SPRINGBOOT_ALLOWLIST: dict[str, str] = {
    "server.ssl.enabled-protocols": "protocols",
    "server.ssl.protocol": "protocols",
    "server.ssl.ciphers": "ciphers",
    "server.ssl.certificate": "cert_key",
    "server.ssl.certificate-private-key": "cert_key",
    "server.ssl.key-store": "cert_key",
    "server.ssl.key-store-type": "cert_key",
    "server.ssl.key-store-provider": "cert_key",
    "server.ssl.key-alias": "cert_key",
    "server.ssl.client-auth": "client_auth",
    "server.ssl.trust-store": "trust",
    "server.ssl.trust-store-type": "trust",
    "server.ssl.trust-certificate": "trust",
    "jdk.tls.namedGroups": "curves",
    "server.port": "endpoint",
    "server.address": "endpoint",
    "server.ssl.enabled": "endpoint",
}

ALLOWLISTS = {
    "nginx": NGINX_ALLOWLIST,
    "apache": APACHE_ALLOWLIST,
    "springboot": SPRINGBOOT_ALLOWLIST,
}

POSTURE_CATEGORIES = (
    "protocols",
    "ciphers",
    "cert_key",
    "client_auth",
    "trust",
    "session",
    "ocsp",
    "hsts",
    "cipher_order",
    "curves",
)


def check_size(path: str, content: str | bytes, limit: int = MAX_FILE_BYTES) -> None:
    size = len(content.encode("utf-8")) if isinstance(content, str) else len(content)
    if size > limit:
        raise FileTooLarge(path, size, limit)
