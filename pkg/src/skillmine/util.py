"""Shared low-level helpers: slugs, canonical JSON, digests, atomic file writes."""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
from pathlib import Path
from typing import Any, Iterable

_SLUG_STRIP = re.compile(r"[^a-z0-9]+")


def slugify(text: str) -> str:
    """Lowercase, collapse non-alphanumerics to single hyphens."""
    slug = _SLUG_STRIP.sub("-", text.lower()).strip("-")
    return slug or "x"


def canonical_json(obj: Any) -> str:
    """Compact, key-sorted JSON: the one-line record encoding."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def dump_json_doc(obj: Any) -> str:
    """Pretty, key-sorted JSON document with a trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write via temp file + rename in the same directory; durable on return."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def normalize_output_bytes(data: bytes) -> bytes:
    """Normalize text output for stability digests.

    Strips trailing whitespace per line and guarantees a single final
    newline. Non-UTF-8 payloads are digested raw.
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        return data
    lines = [line.rstrip() for line in text.splitlines()]
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def iter_files(root: Path, exclude: Iterable[str] = ()) -> list[Path]:
    """All files under root, sorted by relative path, minus excluded prefixes.

    Exclusions are relative POSIX paths; a trailing ``/`` is not required,
    and an entry excludes both the path itself and everything beneath it.
    """
    skip = tuple(e.rstrip("/") for e in exclude)
    found: list[Path] = []
    if not root.exists():
        return found
    for path in sorted(root.rglob("*")):
        if not path.is_file():
            continue
        rel = path.relative_to(root).as_posix()
        if any(rel == s or rel.startswith(s + "/") for s in skip):
            continue
        found.append(path)
    return found


def digest_dir(root: Path, exclude: Iterable[str] = (), normalize: bool = False) -> str:
    """Order-independent content digest of a directory tree."""
    digest = hashlib.sha256()
    for path in iter_files(root, exclude):
        rel = path.relative_to(root).as_posix()
        data = path.read_bytes()
        if normalize:
            data = normalize_output_bytes(data)
        digest.update(rel.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(sha256_hex(data).encode("ascii"))
        digest.update(b"\x00")
    return digest.hexdigest()


def is_escaping_relpath(path: str) -> bool:
    """True when a declared relative path is absolute or climbs out of its root."""
    if not path or path.startswith("/") or path.startswith("\\"):
        return True
    pure = Path(path)
    if pure.is_absolute():
        return True
    depth = 0
    for part in pure.parts:
        if part == "..":
            depth -= 1
        elif part != ".":
            depth += 1
        if depth < 0:
            return True
    return depth <= 0
