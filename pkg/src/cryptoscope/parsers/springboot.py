"""Spring Boot ``application*.yml`` / ``application*.properties`` parsing and profile merging."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

import yaml

from .base import (
    SPRINGBOOT_ALLOWLIST,
    DirectiveValue,
    IntermediateConfig,
    ParseError,
    SourceLoc,
    check_size,
    make_context_id,
)

logger = logging.getLogger(__name__)

PROFILE_KEYS = ("spring.config.activate.on-profile", "spring.profiles")
_INDEXED = re.compile(r"^(.*)\[(\d+)\]$")
_DOC_SEPARATORS = ("#---", "!---")


@dataclass
class ProfileDocument:
    file: str
    index: int
    profiles: tuple[str, ...] = ()
    keys: dict[str, DirectiveValue] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def is_default(self) -> bool:
        return not self.profiles


def _split_profiles(raw: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in raw.split(",") if p.strip())


def _join_lists(raw: dict[str, list[tuple[int, DirectiveValue]]], out: dict[str, DirectiveValue]) -> None:
    # list-valued keys are canonicalized to one comma-joined string
    for key, items in raw.items():
        items.sort(key=lambda t: t[0])
        first = items[0][1]
        out[key] = DirectiveValue(",".join(v.value for _, v in items), first.source, 0)


def _scalar_text(node: yaml.ScalarNode) -> str:
    return "" if node.tag.endswith(":null") and node.value in ("", "~", "null") else node.value


def _flatten_yaml(node, prefix: str, file: str, out: dict[str, DirectiveValue], key_loc: SourceLoc | None) -> None:
    if isinstance(node, yaml.MappingNode):
        for k_node, v_node in node.value:
            if not isinstance(k_node, yaml.ScalarNode):
                raise ParseError("complex mapping key", file, k_node.start_mark.line + 1, k_node.start_mark.column + 1)
            key = f"{prefix}.{k_node.value}" if prefix else str(k_node.value)
            loc = SourceLoc(file, k_node.start_mark.line + 1, k_node.start_mark.column + 1)
            _flatten_yaml(v_node, key, file, out, loc)
    elif isinstance(node, yaml.SequenceNode):
        if all(isinstance(item, yaml.ScalarNode) for item in node.value):
            text = ",".join(_scalar_text(item) for item in node.value)
            out[prefix] = DirectiveValue(text, key_loc or _loc(node, file), 0)
        else:
            for i, item in enumerate(node.value):
                _flatten_yaml(item, f"{prefix}[{i}]", file, out, _loc(item, file))
    else:
        out[prefix] = DirectiveValue(_scalar_text(node), key_loc or _loc(node, file), 0)


def _loc(node, file: str) -> SourceLoc:
    return SourceLoc(file, node.start_mark.line + 1, node.start_mark.column + 1)


def _parse_yaml(text: str, file: str) -> list[ProfileDocument]:
    docs: list[ProfileDocument] = []
    try:
        nodes = list(yaml.compose_all(text, Loader=yaml.SafeLoader))
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else 1
        column = mark.column + 1 if mark else 1
        raise ParseError(f"invalid YAML: {exc.problem or exc}", file, line, column) from None
    except yaml.YAMLError as exc:
        raise ParseError(f"invalid YAML: {exc}", file, 1, 1) from None
    for node in nodes:
        if node is None:
            continue
        if isinstance(node, yaml.ScalarNode) and node.value == "":
            continue
        if not isinstance(node, yaml.MappingNode):
            raise ParseError("document is not a mapping", file, node.start_mark.line + 1, node.start_mark.column + 1)
        keys: dict[str, DirectiveValue] = {}
        _flatten_yaml(node, "", file, keys, None)
        docs.append(_make_doc(file, len(docs), keys))
    return docs


def _make_doc(file: str, index: int, keys: dict[str, DirectiveValue]) -> ProfileDocument:
    profiles: tuple[str, ...] = ()
    for pk in PROFILE_KEYS:
        if pk in keys:
            profiles = _split_profiles(keys[pk].value)
            break
    return ProfileDocument(file=file, index=index, profiles=profiles, keys=keys)


_PROP_ESCAPES = {"t": "\t", "n": "\n", "r": "\r", "f": "\f"}


def _unescape(text: str, file: str, line: int, column: int) -> str:
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            if nxt == "u":
                hexpart = text[i + 2 : i + 6]
                if len(hexpart) != 4 or not all(h in "0123456789abcdefABCDEF" for h in hexpart):
                    raise ParseError("malformed \\uXXXX escape", file, line, column + i)
                out.append(chr(int(hexpart, 16)))
                i += 6
                continue
            out.append(_PROP_ESCAPES.get(nxt, nxt))
            i += 2
            continue
        out.append(c)
        i += 1
    return "".join(out)


def _parse_properties(text: str, file: str) -> list[ProfileDocument]:
    docs: list[ProfileDocument] = []
    keys: dict[str, DirectiveValue] = {}
    indexed: dict[str, list[tuple[int, DirectiveValue]]] = {}
    warnings: list[str] = []

    def close() -> None:
        nonlocal keys, indexed, warnings
        _join_lists(indexed, keys)
        if keys or not docs:
            doc = _make_doc(file, len(docs), keys)
            doc.warnings = warnings
            docs.append(doc)
        keys, indexed, warnings = {}, {}, []

    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line_no = i + 1
        raw = lines[i]
        i += 1
        stripped = raw.strip()
        if stripped in _DOC_SEPARATORS:
            close()
            continue
        if not stripped or stripped[0] in "#!":
            continue
        logical = raw.lstrip()
        col = len(raw) - len(logical) + 1
        while logical.endswith("\\") and not logical.endswith("\\\\") and i < len(lines):
            logical = logical[:-1] + lines[i].lstrip()
            i += 1
        m = re.match(r"((?:\\.|[^\s:=\\])+)\s*[:=]?\s*(.*)$", logical)
        if not m or not m.group(1):
            raise ParseError("property line has no key", file, line_no, col)
        key = _unescape(m.group(1), file, line_no, col)
        value = _unescape(m.group(2), file, line_no, col + m.start(2))
        dv = DirectiveValue(value, SourceLoc(file, line_no, col), 0)
        im = _INDEXED.match(key)
        if im:
            indexed.setdefault(im.group(1), []).append((int(im.group(2)), dv))
            continue
        if key in keys:
            warnings.append(
                f"shadowed directive '{key}' at {file}:{keys[key].source.line} overridden at line {line_no}"
            )
        keys[key] = dv
    close()
    return docs


def parse_springboot(entry) -> list[ProfileDocument]:
    check_size(entry.path, entry.content)
    if entry.path.lower().endswith(".properties"):
        return _parse_properties(entry.content, entry.path)
    return _parse_yaml(entry.content, entry.path)


def active_profiles_from(docs: list[ProfileDocument]) -> list[str]:
    """``spring.profiles.active`` as declared by the default documents, last wins."""
    active: list[str] = []
    for doc in docs:
        if doc.is_default and "spring.profiles.active" in doc.keys:
            active = list(_split_profiles(doc.keys["spring.profiles.active"].value))
    return active


def _is_allowlisted(key: str) -> bool:
    return key in SPRINGBOOT_ALLOWLIST


def merge_profiles(
    docs: list[ProfileDocument], active_profiles: list[str] | None = None, path: str | None = None
) -> IntermediateConfig:
    """Overlay default documents with each active profile, later overlays winning per key."""
    active_profiles = list(active_profiles or [])
    file = path if path is not None else (docs[0].file if docs else "")
    warnings: list[str] = []
    for doc in docs:
        warnings.extend(doc.warnings)

    layers: list[dict[str, DirectiveValue]] = []
    default_layer: dict[str, DirectiveValue] = {}
    for doc in docs:
        if doc.is_default:
            default_layer.update(doc.keys)
    layers.append(default_layer)
    for profile in active_profiles:
        matching = [d for d in docs if profile in d.profiles]
        if not matching:
            warnings.append(f"active profile '{profile}' has no document")
            logger.warning("%s: active profile %r has no document", file, profile)
            continue
        layer: dict[str, DirectiveValue] = {}
        for d in matching:
            layer.update(d.keys)
        layers.append(layer)

    effective: dict[str, DirectiveValue] = {}
    last = len(layers) - 1
    for idx, layer in enumerate(layers):
        for key, dv in layer.items():
            effective[key] = DirectiveValue(dv.value, dv.source, last - idx)

    directives = {k: effective[k] for k in sorted(effective) if _is_allowlisted(k)}
    enabled = effective.get("server.ssl.enabled")
    if enabled is not None:
        tls_enabled = enabled.value.strip().lower() == "true"
    else:
        tls_enabled = any(k.startswith("server.ssl.") for k in effective)
    label = "application" + (f"[{','.join(active_profiles)}]" if active_profiles else "")
    endpoints = [directives["server.port"]] if tls_enabled and "server.port" in directives else []
    return IntermediateConfig(
        technology="springboot",
        context_id=make_context_id(file, 0, label),
        file=file,
        ordinal=0,
        label=label,
        tls_enabled=tls_enabled,
        directives=directives,
        endpoints=endpoints,
        warnings=warnings,
    )
