"""Versioned line-oriented text formats shared by the toolkit's file types.

Two families are used everywhere:

  * record files: a ``#<kind> v<N> key=value ...`` header line followed by
    comma-separated records, one per line (traces, schedules, journals);
  * block files: the same header followed by ``[section]`` blocks of
    ``key = value`` pairs (configs, models, SLO templates, checkpoints).

Blank lines are ignored.  Lines starting with ``#`` after the header are
comments unless a reader explicitly asks for them (the schedule format keeps
its job metadata on ``#job`` lines so a schedule file stays self-contained).
"""

from __future__ import annotations

import io
import math
import os
from typing import Iterable, Iterator, TextIO


class FormatError(ValueError):
    """Malformed file content, with enough location detail to fix it."""

    def __init__(self, message: str, *, path: str | None = None, line_no: int | None = None):
        loc = ""
        if path is not None:
            loc = f"{path}:"
        if line_no is not None:
            loc = f"{loc}{line_no}: "
        elif loc:
            loc = f"{loc} "
        super().__init__(f"{loc}{message}")
        self.path = path
        self.line_no = line_no


def format_number(value: float) -> str:
    """Render a number so that parsing it back is exact (ints stay ints)."""
    if isinstance(value, bool):
        raise TypeError("bool is not a file-format number")
    if isinstance(value, int):
        return str(value)
    f = float(value)
    if not math.isfinite(f):
        return repr(f)
    if f == int(f) and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def write_header(out: TextIO, kind: str, version: int = 1, **meta) -> None:
    parts = [f"#{kind} v{version}"]
    for key in meta:
        parts.append(f"{key}={format_number(meta[key]) if isinstance(meta[key], (int, float)) else meta[key]}")
    out.write(" ".join(parts) + "\n")


def parse_header(line: str, kind: str, *, path: str | None = None) -> dict[str, str]:
    """Validate a header line and return its key=value metadata."""
    tokens = line.strip().split()
    if not tokens or tokens[0] != f"#{kind}":
        raise FormatError(f"expected '#{kind} v<N>' header, got {line.strip()!r}", path=path, line_no=1)
    if len(tokens) < 2 or not tokens[1].startswith("v"):
        raise FormatError(f"missing version tag in {kind} header", path=path, line_no=1)
    version = tokens[1][1:]
    if version != "1":
        raise FormatError(f"unsupported {kind} format version {tokens[1]!r}", path=path, line_no=1)
    meta: dict[str, str] = {}
    for tok in tokens[2:]:
        if "=" not in tok:
            raise FormatError(f"malformed header token {tok!r}", path=path, line_no=1)
        key, _, val = tok.partition("=")
        meta[key] = val
    return meta


def open_text(source) -> tuple[TextIO, str, bool]:
    """Accept a path or an open text/byte stream; returns (stream, name, owned)."""
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8"), os.fspath(source), True
    if isinstance(source, (io.RawIOBase, io.BufferedIOBase)):
        return io.TextIOWrapper(source, encoding="utf-8"), getattr(source, "name", "<stream>"), False
    return source, getattr(source, "name", "<stream>"), False


def iter_records(lines: Iterable[str], *, keep_comments: bool = False) -> Iterator[tuple[int, str]]:
    """Yield (line_no, stripped_line) for content lines after the header."""
    for line_no, raw in enumerate(lines, start=2):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#") and not keep_comments:
            continue
        yield line_no, line


def read_blocks(source, kind: str) -> tuple[dict[str, str], list[tuple[str, dict[str, str], int]]]:
    """Parse a block file; returns (header_meta, [(section, fields, line_no)])."""
    stream, path, owned = open_text(source)
    try:
        first = stream.readline()
        meta = parse_header(first, kind, path=path)
        blocks: list[tuple[str, dict[str, str], int]] = []
        current: dict[str, str] | None = None
        for line_no, line in iter_records(stream):
            if line.startswith("[") and line.endswith("]"):
                current = {}
                blocks.append((line[1:-1].strip(), current, line_no))
                continue
            if "=" not in line:
                raise FormatError(f"expected 'key = value', got {line!r}", path=path, line_no=line_no)
            if current is None:
                raise FormatError("field outside any [section] block", path=path, line_no=line_no)
            key, _, val = line.partition("=")
            key = key.strip()
            if key in current:
                raise FormatError(f"duplicate field {key!r}", path=path, line_no=line_no)
            current[key] = val.strip()
        return meta, blocks
    finally:
        if owned:
            stream.close()


def write_blocks(out: TextIO, kind: str, blocks: Iterable[tuple[str, dict]], **meta) -> None:
    write_header(out, kind, **meta)
    for section, fields in blocks:
        out.write(f"\n[{section}]\n")
        for key, value in fields.items():
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                value = format_number(value)
            out.write(f"{key} = {value}\n")


def parse_number(text: str, *, path: str | None = None, line_no: int | None = None,
                 field: str = "value") -> float:
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"{field}: not a number: {text!r}", path=path, line_no=line_no) from None


def parse_int(text: str, *, path: str | None = None, line_no: int | None = None,
              field: str = "value") -> int:
    value = parse_number(text, path=path, line_no=line_no, field=field)
    if value != int(value):
        raise FormatError(f"{field}: expected an integer, got {text!r}", path=path, line_no=line_no)
    return int(value)
