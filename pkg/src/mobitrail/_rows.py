"""Field-level parsing rules shared by every event reader.

The compiled parser re-implements exactly these checks in C and defers to
:func:`parse_csv_line` for quoted lines, so both paths accept and reject the
same inputs.
"""

from __future__ import annotations

import csv
import math
from datetime import datetime, timedelta, timezone

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
MAX_INT_DIGITS = 18
_NUM_CHARS = b"0123456789+-.eE"


class RowError(ValueError):
    pass


def parse_unix_ts(b: bytes) -> int:
    if not b or len(b) > MAX_INT_DIGITS or not b.isdigit():
        raise RowError(f"bad timestamp {b[:40]!r}")
    return int(b)


def parse_iso_ts(b: bytes) -> int:
    try:
        s = b.decode("ascii")
        if s.endswith(("Z", "z")):
            s = s[:-1] + "+00:00"
        dt = datetime.fromisoformat(s)
    except (UnicodeDecodeError, ValueError):
        raise RowError(f"bad ISO-8601 timestamp {b[:40]!r}") from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    secs = (dt - EPOCH) // timedelta(seconds=1)
    if secs < 0:
        raise RowError("timestamp before 1970")
    return secs


def looks_like_unix(b: bytes) -> bool:
    return bool(b) and b.isdigit()


def parse_coord(b: bytes, lo: float, hi: float, what: str) -> float:
    if not b or b.translate(None, _NUM_CHARS):
        raise RowError(f"bad {what} {b[:40]!r}")
    try:
        v = float(b)
    except ValueError:
        raise RowError(f"bad {what} {b[:40]!r}") from None
    if not math.isfinite(v) or v < lo or v > hi:
        raise RowError(f"{what} out of range: {b[:40]!r}")
    return v + 0.0


def parse_region(b: bytes) -> int:
    if not b:
        return -1
    if len(b) > MAX_INT_DIGITS or not b.isdigit():
        raise RowError(f"bad region_id {b[:40]!r}")
    return int(b)


def decode_user(b: bytes) -> str:
    if not b:
        raise RowError("empty user_id")
    try:
        return b.decode("utf-8")
    except UnicodeDecodeError:
        raise RowError("user_id is not valid UTF-8") from None


def split_csv_line(line: bytes) -> list[bytes]:
    if b'"' not in line:
        return line.split(b",")
    try:
        text = line.decode("utf-8")
    except UnicodeDecodeError:
        raise RowError("quoted line is not valid UTF-8") from None
    try:
        rows = list(csv.reader([text], strict=True))
    except csv.Error as exc:
        raise RowError(f"bad quoting: {exc}") from None
    return [f.encode("utf-8") for f in rows[0]] if rows else []


def parse_csv_line(line: bytes, has_region: bool, ts_parser=parse_unix_ts):
    """Return ``(user_id, timestamp, lat, lon, region_id)``; region -1 when absent."""
    fields = split_csv_line(line)
    expected = 5 if has_region else 4
    if len(fields) != expected:
        raise RowError(f"expected {expected} fields, got {len(fields)}")
    ts = ts_parser(fields[1])
    lat = parse_coord(fields[2], -90.0, 90.0, "lat")
    lon = parse_coord(fields[3], -180.0, 180.0, "lon")
    region = parse_region(fields[4]) if has_region else -1
    user = decode_user(fields[0])
    return user, ts, lat, lon, region


def iter_lines(f, chunk_size: int = 1 << 22):
    """Yield raw lines (no terminator) from a binary reader, reading in chunks."""
    carry = b""
    while True:
        block = f.read(chunk_size)
        if not block:
            break
        data = carry + block if carry else block
        parts = data.split(b"\n")
        carry = parts.pop()
        for p in parts:
            yield p[:-1] if p.endswith(b"\r") else p
    if carry:
        yield carry[:-1] if carry.endswith(b"\r") else carry
