"""Nginx block-directive parser and server-context resolver.

The grammar is the usual one: ``name args... ;`` leaves and ``name args... { ... }``
blocks, ``#`` comments, single/double quoted strings. Inheritance flows
main -> http (or stream/mail) -> server, nearest scope wins.
"""

from __future__ import annotations

import glob
import logging
import os
from dataclasses import dataclass
from pathlib import Path

from .base import (
    NGINX_ALLOWLIST,
    DirectiveNode,
    DirectiveValue,
    IntermediateConfig,
    ParseError,
    SourceLoc,
    check_size,
    make_context_id,
)

logger = logging.getLogger(__name__)

_SPECIAL = {"{", "}", ";"}
_MAX_INCLUDE_DEPTH = 8


@dataclass
class _Token:
    text: str
    line: int
    column: int
    quoted: bool = False

    @property
    def is_special(self) -> bool:
        return not self.quoted and self.text in _SPECIAL


def tokenize(text: str, file: str) -> list[_Token]:
    tokens: list[_Token] = []
    i, n = 0, len(text)
    line, col = 1, 1

    def advance(k: int = 1) -> None:
        nonlocal i, line, col
        for _ in range(k):
            if text[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = text[i]
        if ch in " \t\r\n\f\v":
            advance()
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                advance()
            continue
        if ch in _SPECIAL:
            tokens.append(_Token(ch, line, col))
            advance()
            continue
        if ch in "\"'":
            quote, start_line, start_col = ch, line, col
            advance()
            buf = []
            while True:
                if i >= n:
                    raise ParseError("unterminated quoted string", file, start_line, start_col)
                c = text[i]
                if c == "\\" and i + 1 < n and text[i + 1] in (quote, "\\"):
                    buf.append(text[i + 1])
                    advance(2)
                    continue
                if c == quote:
                    advance()
                    break
                buf.append(c)
                advance()
            tokens.append(_Token("".join(buf), start_line, start_col, quoted=True))
            continue
        start_line, start_col = line, col
        buf = []
        while i < n:
            c = text[i]
            if c in " \t\r\n\f\v;{}":
                # ${var} is part of the token, not a block opener
                if c == "{" and buf and buf[-1] == "$":
                    while i < n and text[i] != "}":
                        buf.append(text[i])
                        advance()
                    if i < n:
                        buf.append("}")
                        advance()
                    continue
                break
            if c == "\\" and i + 1 < n:
                buf.append(text[i : i + 2])
                advance(2)
                continue
            buf.append(c)
            advance()
        tokens.append(_Token("".join(buf), start_line, start_col))
    return tokens


def parse_text(text: str, file: str) -> list[DirectiveNode]:
    tokens = tokenize(text, file)
    pos = 0

    def parse_block(opener: DirectiveNode | None) -> list[DirectiveNode]:
        nonlocal pos
        nodes: list[DirectiveNode] = []
        while pos < len(tokens):
            tok = tokens[pos]
            if tok.is_special:
                if tok.text == "}":
                    if opener is None:
                        raise ParseError("unexpected '}'", file, tok.line, tok.column)
                    pos += 1
                    return nodes
                raise ParseError(f"unexpected '{tok.text}'", file, tok.line, tok.column)
            node = DirectiveNode(tok.text, [], SourceLoc(file, tok.line, tok.column))
            pos += 1
            while True:
                if pos >= len(tokens):
                    raise ParseError(
                        f"unexpected end of file, expecting ';' or '{{' after '{node.name}'",
                        file,
                        tok.line,
                        tok.column,
                    )
                arg = tokens[pos]
                pos += 1
                if arg.is_special:
                    if arg.text == ";":
                        break
                    if arg.text == "{":
                        node.block = True
                        node.children = parse_block(node)
                        break
                    raise ParseError("unexpected '}'", file, arg.line, arg.column)
                node.args.append(arg.text)
            nodes.append(node)
        if opener is not None:
            src = opener.source
            raise ParseError(f"unclosed block '{opener.name}' (missing '}}')", file, src.line, src.column)
        return nodes

    return parse_block(None)


def parse_nginx(entry) -> list[DirectiveNode]:
    """Parse an nginx entry (anything with ``path`` and ``content``) into a tree."""
    check_size(entry.path, entry.content)
    return parse_text(entry.content, entry.path)


def _quote(arg: str) -> str:
    if arg and not any(c in arg for c in " \t\r\n;{}#\"'\\") :
        return arg
    return '"' + arg.replace("\\", "\\\\").replace('"', '\\"') + '"'


def dump(nodes: list[DirectiveNode], indent: int = 0) -> str:
    """Serialize a tree back to nginx syntax (comments are not preserved)."""
    pad = "    " * indent
    out: list[str] = []
    for node in nodes:
        head = " ".join([node.name] + [_quote(a) for a in node.args])
        if node.block:
            out.append(f"{pad}{head} {{")
            inner = dump(node.children, indent + 1)
            if inner:
                out.append(inner.rstrip("\n"))
            out.append(f"{pad}}}")
        else:
            out.append(f"{pad}{head};")
    return "\n".join(out) + ("\n" if out else "")


# -- include expansion -------------------------------------------------------


def _rel(path: Path, root: Path) -> str:
    return path.relative_to(root).as_posix()


def expand_includes(
    nodes: list[DirectiveNode],
    file: str,
    root: str | os.PathLike | None,
    _depth: int = 0,
    _stack: tuple[str, ...] = (),
) -> list[DirectiveNode]:
    """Splice included files in place of ``include`` leaves.

    Targets resolve relative to the including file and only when they exist
    under ``root``; anything else stays as an unresolved ``include`` leaf.
    """
    if root is None:
        return nodes
    root_p = Path(root).resolve()
    out: list[DirectiveNode] = []
    for node in nodes:
        if node.block:
            clone = DirectiveNode(node.name, list(node.args), node.source, [], True)
            clone.children = expand_includes(node.children, file, root, _depth, _stack)
            out.append(clone)
            continue
        if node.name != "include" or len(node.args) != 1 or _depth >= _MAX_INCLUDE_DEPTH:
            out.append(node)
            continue
        pattern = node.args[0]
        base = (root_p / node.source.file).parent
        target = Path(pattern) if os.path.isabs(pattern) else base / pattern
        matches = sorted(glob.glob(str(target)))
        resolved: list[Path] = []
        for m in matches:
            p = Path(m).resolve()
            if p.is_file() and (p == root_p or root_p in p.parents):
                resolved.append(p)
        if not resolved:
            out.append(node)
            continue
        for p in resolved:
            rel = _rel(p, root_p)
            if rel in _stack:
                logger.warning("include cycle through %s", rel)
                continue
            try:
                text = p.read_text(encoding="utf-8", errors="replace")
                check_size(rel, text)
                sub = parse_text(text, rel)
            except (OSError, ParseError) as exc:
                logger.warning("cannot include %s: %s", rel, exc)
                out.append(node)
                continue
            out.extend(expand_includes(sub, rel, root, _depth + 1, _stack + (rel,)))
    return out


# -- context resolution ------------------------------------------------------


def _key_for(node: DirectiveNode) -> tuple[str, str] | None:
    """Allowlist key and raw value for a leaf, or None when not TLS-relevant."""
    name = node.name
    if name == "add_header":
        if node.args and node.args[0].lower() == "strict-transport-security":
            return "add_header", " ".join(node.args)
        return None
    if name == "ssl_conf_command":
        if len(node.args) >= 2:
            sub = node.args[0].lower()
            for key in ("ssl_conf_command Groups", "ssl_conf_command Curves"):
                if key.split()[1].lower() == sub:
                    return key, " ".join(node.args[1:])
        return None
    if name in NGINX_ALLOWLIST and name not in ("listen",):
        return name, " ".join(node.args)
    return None


def _scope_values(leaves: list[DirectiveNode]) -> tuple[dict[str, list[tuple[str, DirectiveNode]]], bool]:
    """Group allowlisted leaves of one scope by key, in file order."""
    found: dict[str, list[tuple[str, DirectiveNode]]] = {}
    any_add_header = False
    for node in leaves:
        if node.block:
            continue
        if node.name == "add_header":
            any_add_header = True
        kv = _key_for(node)
        if kv is None:
            continue
        found.setdefault(kv[0], []).append((kv[1], node))
    return found, any_add_header


def _resolve_server(
    server: DirectiveNode, chain: list[list[DirectiveNode]], path: str, ordinal: int
) -> IntermediateConfig:
    # chain: outermost scope first; the server's own children are appended last
    scopes = chain + [server.children]
    per_scope = [_scope_values(s) for s in scopes]
    directives: dict[str, DirectiveValue] = {}
    warnings: list[str] = []

    keys = sorted({k for found, _ in per_scope for k in found})
    for key in keys:
        for depth, (found, any_add_header) in enumerate(reversed(per_scope)):
            if key == "add_header" and any_add_header and key not in found:
                # a scope with its own add_header lines drops inherited ones
                break
            if key in found:
                hits = found[key]
                value, node = hits[-1]
                for _, shadowed in hits[:-1]:
                    warnings.append(
                        f"shadowed directive '{key}' at {shadowed.source.file}:{shadowed.source.line} "
                        f"overridden at line {node.source.line}"
                    )
                directives[key] = DirectiveValue(value, node.source, depth)
                break

    for scope in scopes:
        for node in scope:
            if not node.block and node.name == "include":
                warnings.append(
                    f"unresolved include '{' '.join(node.args)}' at {node.source.file}:{node.source.line}"
                )

    listens = [n for n in server.children if not n.block and n.name == "listen" and n.args]
    ssl_on = directives.get("ssl")
    legacy_ssl = ssl_on is not None and ssl_on.value.lower() == "on"
    tls_listens = [n for n in listens if legacy_ssl or "ssl" in n.args[1:]]
    tls_enabled = bool(tls_listens) or legacy_ssl
    endpoints = [DirectiveValue(" ".join(n.args), n.source, 0) for n in tls_listens]
    primary = tls_listens[0] if tls_listens else (listens[0] if listens else None)
    if primary is not None:
        directives["listen"] = DirectiveValue(" ".join(primary.args), primary.source, 0)

    ordered = {k: directives[k] for k in sorted(directives)}
    return IntermediateConfig(
        technology="nginx",
        context_id=make_context_id(path, ordinal, "server"),
        file=path,
        ordinal=ordinal,
        label="server",
        tls_enabled=tls_enabled,
        directives=ordered,
        endpoints=endpoints,
        warnings=warnings,
    )


def iter_servers(tree: list[DirectiveNode]):
    """Yield (server_node, enclosing scopes) for every ``server`` block."""

    def walk(nodes: list[DirectiveNode], chain: list[list[DirectiveNode]]):
        for node in nodes:
            if not node.block:
                continue
            if node.name == "server":
                yield node, chain
            else:
                yield from walk(node.children, chain + [node.children])

    yield from walk(tree, [tree])


def resolve_nginx_contexts(
    tree: list[DirectiveNode], path: str, root: str | os.PathLike | None = None
) -> list[IntermediateConfig]:
    expanded = expand_includes(tree, path, root)
    return [
        _resolve_server(server, chain, path, i)
        for i, (server, chain) in enumerate(iter_servers(expanded))
    ]


def count_server_blocks(tree: list[DirectiveNode]) -> int:
    return sum(1 for _ in iter_servers(tree))
