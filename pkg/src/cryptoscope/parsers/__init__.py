"""Technology-specific parsers producing IntermediateConfig records."""

from __future__ import annotations

import os

from .apache import parse_apache, resolve_apache_contexts
from .base import (
    ALLOWLISTS,
    MAX_FILE_BYTES,
    DirectiveNode,
    DirectiveValue,
    FileTooLarge,
    IntermediateConfig,
    ParseError,
    SourceLoc,
    tree_shape,
)
from .nginx import parse_nginx, resolve_nginx_contexts
from .springboot import ProfileDocument, active_profiles_from, merge_profiles, parse_springboot

__all__ = [
    "ALLOWLISTS",
    "MAX_FILE_BYTES",
    "DirectiveNode",
    "DirectiveValue",
    "FileTooLarge",
    "IntermediateConfig",
    "ParseError",
    "ProfileDocument",
    "SourceLoc",
    "active_profiles_from",
    "extract_contexts",
    "merge_profiles",
    "parse_apache",
    "parse_nginx",
    "parse_springboot",
    "resolve_apache_contexts",
    "resolve_nginx_contexts",
    "tree_shape",
]


def extract_contexts(
    entry, root: str | os.PathLike | None = None, active_profiles: list[str] | None = None
) -> list[IntermediateConfig]:
    """Parse one corpus entry and resolve it into per-context records."""
    tech = entry.technology_hint
    if tech == "nginx":
        return resolve_nginx_contexts(parse_nginx(entry), entry.path, root)
    if tech == "apache":
        return resolve_apache_contexts(parse_apache(entry), entry.path, root)
    if tech == "springboot":
        docs = parse_springboot(entry)
        if active_profiles is None:
            active_profiles = active_profiles_from(docs)
        return [merge_profiles(docs, active_profiles, entry.path)]
    raise ValueError(f"{entry.path}: no parser for technology {tech!r}")
