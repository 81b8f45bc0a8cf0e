"""Apache httpd configuration parser and VirtualHost resolver."""

from __future__ import annotations

import glob
import logging
import os
from pathlib import Path

from .base import (
    APACHE_ALLOWLIST,
    DirectiveNode,
    DirectiveValue,
    IntermediateConfig,
    ParseError,
    SourceLoc,
    check_size,
    make_context_id,
)

logger = logging.getLogger(__name__)

# conditional containers whose contents apply to the enclosing scope
TRANSPARENT = {"ifmodule", "ifdefine", "ifversion", "iffile", "ifdirective", "ifsection"}

_CANONICAL = {k.lower(): k for k in APACHE_ALLOWLIST}
_MAX_INCLUDE_DEPTH = 8


def split_args(text: str, file: str, line: int, col0: int) -> list[tuple[str, int]]:
    """Whitespace split honoring quotes; returns (word, column) pairs."""
    out: list[tuple[str, int]] = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        start = i
        if text[i] in "\"'":
            quote = text[i]
            i += 1
            buf = []
            while True:
                if i >= n:
                    raise ParseError("unterminated quoted string", file, line, col0 + start)
                if text[i] == "\\" and i + 1 < n and text[i + 1] in (quote, "\\"):
                    buf.append(text[i + 1])
                    i += 2
                    continue
                if text[i] == quote:
                    i += 1
                    break
                buf.append(text[i])
                i += 1
            out.append(("".join(buf), col0 + start))
        else:
            while i < n and not text[i].isspace():
                i += 1
            out.append((text[start:i], col0 + start))
    return out


def _logical_lines(text: str):
    """Yield (line_no, raw_line) with backslash continuations joined."""
    pending: list[str] = []
    start = 0
    for no, raw in enumerate(text.splitlines(), start=1):
        if not pending:
            start = no
        stripped = raw.rstrip()
        if stripped.endswith("\\"):
            pending.append(stripped[:-1])
            continue
        pending.append(raw)
        # httpd splices continuation lines without inserting a separator
        yield start, "".join(pending)
        pending = []
    if pending:
        yield start, "".join(pending)


def parse_text(text: str, file: str) -> list[DirectiveNode]:
    top: list[DirectiveNode] = []
    stack: list[DirectiveNode] = []

    def current() -> list[DirectiveNode]:
        return stack[-1].children if stack else top

    for line_no, raw in _logical_lines(text):
        body = raw.strip()
        if not body or body.startswith("#"):
            continue
        indent = len(raw) - len(raw.lstrip())
        col = indent + 1
        if body.startswith("</"):
            if not body.endswith(">"):
                raise ParseError("malformed closing tag", file, line_no, col)
            name = body[2:-1].strip()
            if not stack:
                raise ParseError(f"closing </{name}> without matching opening tag", file, line_no, col)
            open_node = stack[-1]
            if name.lower() != open_node.name.lower():
                raise ParseError(
                    f"</{name}> does not close <{open_node.name}> opened at line {open_node.source.line}",
                    file,
                    line_no,
                    col,
                )
            stack.pop()
            continue
        if body.startswith("<"):
            if not body.endswith(">"):
                raise ParseError("malformed container tag", file, line_no, col)
            words = split_args(body[1:-1], file, line_no, col + 1)
            if not words:
                raise ParseError("empty container tag", file, line_no, col)
            name, name_col = words[0]
            node = DirectiveNode(
                name, [w for w, _ in words[1:]], SourceLoc(file, line_no, name_col), [], True
            )
            current().append(node)
            stack.append(node)
            continue
        words = split_args(body, file, line_no, col)
        name, name_col = words[0]
        current().append(DirectiveNode(name, [w for w, _ in words[1:]], SourceLoc(file, line_no, name_col)))
    if stack:
        node = stack[-1]
        raise ParseError(
            f"unterminated <{node.name}> container", file, node.source.line, node.source.column
        )
    return top


def parse_apache(entry) -> list[DirectiveNode]:
    check_size(entry.path, entry.content)
    return parse_text(entry.content, entry.path)


def dump(nodes: list[DirectiveNode], indent: int = 0) -> str:
    pad = "    " * indent
    out: list[str] = []

    def q(a: str) -> str:
        if a and not any(c.isspace() or c in "\"'" for c in a):
            return a
        return '"' + a.replace("\\", "\\\\").replace('"', '\\"') + '"'

    for node in nodes:
        head = " ".join([node.name] + [q(a) for a in node.args])
        if node.block:
            out.append(f"{pad}<{head}>")
            inner = dump(node.children, indent + 1)
            if inner:
                out.append(inner.rstrip("\n"))
            out.append(f"{pad}</{node.name}>")
        else:
            out.append(f"{pad}{head}")
    return "\n".join(out) + ("\n" if out else "")


def expand_includes(
    nodes: list[DirectiveNode],
    root: str | os.PathLike | None,
    _depth: int = 0,
    _stack: tuple[str, ...] = (),
) -> list[DirectiveNode]:
    if root is None:
        return nodes
    root_p = Path(root).resolve()
    out: list[DirectiveNode] = []
    for node in nodes:
        if node.block:
            clone = DirectiveNode(node.name, list(node.args), node.source, [], True)
            clone.children = expand_includes(node.children, root, _depth, _stack)
            out.append(clone)
            continue
        if node.name.lower() not in ("include", "includeoptional") or len(node.args) != 1 or _depth >= _MAX_INCLUDE_DEPTH:
            out.append(node)
            continue
        pattern = node.args[0]
        base = (root_p / node.source.file).parent
        target = Path(pattern) if os.path.isabs(pattern) else base / pattern
        resolved = [
            Path(m).resolve()
            for m in sorted(glob.glob(str(target)))
            if Path(m).is_file() and root_p in Path(m).resolve().parents
        ]
        if not resolved:
            out.append(node)
            continue
        for p in resolved:
            rel = p.relative_to(root_p).as_posix()
            if rel in _stack:
                continue
            try:
                text = p.read_text(encoding="utf-8", errors="replace")
                check_size(rel, text)
                sub = parse_text(text, rel)
            except (OSError, ParseError) as exc:
                logger.warning("cannot include %s: %s", rel, exc)
                out.append(node)
                continue
            out.extend(expand_includes(sub, root, _depth + 1, _stack + (rel,)))
    return out


def _flatten(nodes: list[DirectiveNode]) -> list[DirectiveNode]:
    """Leaves and VirtualHosts of one scope, with conditional containers inlined."""
    out: list[DirectiveNode] = []
    for node in nodes:
        if node.block and node.name.lower() in TRANSPARENT:
            out.extend(_flatten(node.children))
        else:
            out.append(node)
    return out


_HSTS_ACTIONS = {"set", "add", "append", "merge", "setifempty"}


def _key_for(node: DirectiveNode) -> tuple[str, str] | None:
    lname = node.name.lower()
    args = node.args
    if lname == "header":
        lowered = [a.lower() for a in args]
        if "strict-transport-security" in lowered:
            idx = lowered.index("strict-transport-security")
            if any(a in _HSTS_ACTIONS for a in lowered[:idx]):
                return "Header", " ".join(args)
        return None
    if lname == "sslopensslconfcmd":
        if len(args) >= 2:
            key = _CANONICAL.get(f"sslopensslconfcmd {args[0].lower()}")
            if key:
                return key, " ".join(args[1:])
        return None
    if lname == "sslciphersuite" and len(args) >= 2 and args[0].upper() in ("SSL", "TLSV1.3"):
        if args[0].upper() == "SSL":
            return "SSLCipherSuite", " ".join(args[1:])
        return "SSLCipherSuite TLSv1.3", " ".join(args[1:])
    key = _CANONICAL.get(lname)
    if key is None or key == "VirtualHost":
        return None
    return key, " ".join(args)


def _collect(leaves: list[DirectiveNode]) -> dict[str, list[tuple[str, DirectiveNode]]]:
    found: dict[str, list[tuple[str, DirectiveNode]]] = {}
    for node in leaves:
        if node.block:
            continue
        kv = _key_for(node)
        if kv is not None:
            found.setdefault(kv[0], []).append((kv[1], node))
    return found


def resolve_apache_contexts(
    tree: list[DirectiveNode], path: str, root: str | os.PathLike | None = None
) -> list[IntermediateConfig]:
    expanded = expand_includes(tree, root)
    global_scope = _flatten(expanded)
    global_found = _collect(global_scope)
    unresolved_global = [
        n for n in global_scope if not n.block and n.name.lower() in ("include", "includeoptional")
    ]
    vhosts = [n for n in global_scope if n.block and n.name.lower() == "virtualhost"]

    contexts: list[IntermediateConfig] = []
    for ordinal, vhost in enumerate(vhosts):
        own_scope = _flatten(vhost.children)
        own = _collect(own_scope)
        directives: dict[str, DirectiveValue] = {}
        warnings: list[str] = []
        for key in sorted(set(own) | set(global_found)):
            depth, hits = (0, own[key]) if key in own else (1, global_found[key])
            value, node = hits[-1]
            for _, shadowed in hits[:-1]:
                warnings.append(
                    f"shadowed directive '{key}' at {shadowed.source.file}:{shadowed.source.line} "
                    f"overridden at line {node.source.line}"
                )
            directives[key] = DirectiveValue(value, node.source, depth)
        for n in unresolved_global + [
            n for n in own_scope if not n.block and n.name.lower() in ("include", "includeoptional")
        ]:
            warnings.append(f"unresolved include '{' '.join(n.args)}' at {n.source.file}:{n.source.line}")

        engine = directives.get("SSLEngine")
        tls_enabled = engine is not None and engine.value.strip().lower() == "on"
        addresses = [DirectiveValue(a, vhost.source, 0) for a in vhost.args]
        if addresses:
            directives["VirtualHost"] = addresses[0]
        contexts.append(
            IntermediateConfig(
                technology="apache",
                context_id=make_context_id(path, ordinal, "vhost"),
                file=path,
                ordinal=ordinal,
                label="vhost",
                tls_enabled=tls_enabled,
                directives={k: directives[k] for k in sorted(directives)},
                endpoints=addresses if tls_enabled else [],
                warnings=warnings,
            )
        )
    return contexts
