from __future__ import annotations

import json
import os
import re
import tempfile
from pathlib import Path
from typing import Any

# `$var`, `${VAR}` (nginx, shell, Spring placeholders)
INTERPOLATION_RE = re.compile(r"\$\{[^}]*\}|\$[A-Za-z_][A-Za-z0-9_]*")


def has_interpolation(value: str | None) -> bool:
    return bool(value) and INTERPOLATION_RE.search(value) is not None


def dumps(obj: Any) -> str:
    """Canonical JSON text: stable key order, trailing newline."""
    return json.dumps(obj, indent=2, sort_keys=False, ensure_ascii=False) + "\n"


def write_atomic(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str | os.PathLike, obj: Any) -> None:
    write_atomic(path, dumps(obj))
