"""JSONL reading/writing, atomic file writes and content digests."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from collections.abc import Callable, Iterable, Iterator
from pathlib import Path
from typing import Any, TypeVar

from rankcot.errors import InputError

T = TypeVar("T")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def iter_jsonl(path: str | os.PathLike) -> Iterator[dict]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def read_jsonl(path: str | os.PathLike, parse: Callable[[dict], T] | None = None) -> list[T]:
    rows = list(iter_jsonl(path))
    if parse is None:
        return rows
    return [parse(row) for row in rows]


def dumps_jsonl(rows: Iterable[Any]) -> str:
    lines = []
    for row in rows:
        if hasattr(row, "to_dict"):
            row = row.to_dict()
        lines.append(json.dumps(row, ensure_ascii=False))
    return "".join(line + "\n" for line in lines)


def write_text_atomic(path: str | os.PathLike, text: str) -> Path:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    return path


def write_jsonl(path: str | os.PathLike, rows: Iterable[Any]) -> Path:
    return write_text_atomic(path, dumps_jsonl(rows))


def write_json(path: str | os.PathLike, obj: Any) -> Path:
    return write_text_atomic(path, json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True) + "\n")


def git_blob_digest(data: bytes) -> str:
    """SHA-1 over ``b"blob <len>\\0" + data``, as ``git hash-object`` computes it."""
    header = b"blob %d\0" % len(data)
    return hashlib.sha1(header + data).hexdigest()


def file_digest(path: str | os.PathLike) -> str:
    return git_blob_digest(Path(path).read_bytes())


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
