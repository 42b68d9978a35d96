"""Readers and writers for the two plain-text interchange formats.

pals-histogram v1
    '#'-prefixed header lines carrying key=value metadata, then one
    "<index> <count>" line per channel.  The keys channel_width_ns,
    n_channels, live_time_s and seed are mandatory; anything else is
    free-form metadata.

pals-report v1
    One "key = value" line per entry, '#' comment lines, and optional
    table blocks introduced by "# table: <name>" / "# columns: ..."
    comments followed by whitespace-separated numeric rows.

Both formats use LF line endings and are written deterministically so
re-runs produce byte-identical files.
"""

from __future__ import annotations

import numpy as np

from .model import Histogram

__all__ = [
    "FormatError",
    "REQUIRED_HISTOGRAM_KEYS",
    "write_histogram",
    "read_histogram",
    "write_report",
    "read_report",
]


class FormatError(ValueError):
    """Raised on malformed or incomplete input files."""


REQUIRED_HISTOGRAM_KEYS = ("channel_width_ns", "n_channels", "live_time_s", "seed")

_HISTOGRAM_MAGIC = "# pals-histogram v1"
_REPORT_MAGIC = "# pals-report v1"


def format_value(value) -> str:
    """Deterministic text form: repr for floats (exact round-trip)."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _check_meta_token(token: str, what: str):
    if not token or any(ch in token for ch in "\n\r"):
        raise FormatError(f"invalid {what}: {token!r}")


def write_histogram(path, hist: Histogram, header_comments=()) -> None:
    """Write a Histogram as pals-histogram v1.

    Geometry keys are emitted first, remaining metadata in sorted key
    order.  ``header_comments`` lines (no leading '#') are written after
    the metadata block.
    """
    meta = dict(hist.metadata)
    meta["channel_width_ns"] = format_value(float(hist.channel_width))
    meta["n_channels"] = format_value(hist.n_channels)
    meta["live_time_s"] = format_value(float(hist.live_time))
    meta.setdefault("seed", "0")
    lines = [_HISTOGRAM_MAGIC]
    for key in REQUIRED_HISTOGRAM_KEYS:
        lines.append(f"# {key}={meta.pop(key)}")
    for key in sorted(meta):
        _check_meta_token(key, "metadata key")
        value = format_value(meta[key])
        _check_meta_token(value, "metadata value")
        lines.append(f"# {key}={value}")
    for comment in header_comments:
        lines.append(f"# {comment}")
    for index, count in enumerate(hist.counts):
        lines.append(f"{index} {int(count)}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_histogram(path) -> Histogram:
    """Parse a pals-histogram v1 file; missing header keys are an error."""
    meta = {}
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    meta[key.strip()] = value.strip()
                continue
            parts = line.split()
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected '<index> <count>'")
            try:
                rows.append((int(parts[0]), int(parts[1])))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-integer channel row") from exc
    missing = [key for key in REQUIRED_HISTOGRAM_KEYS if key not in meta]
    if missing:
        raise FormatError(f"{path}: missing header keys: {', '.join(missing)}")
    try:
        width = float(meta["channel_width_ns"])
        n_channels = int(meta["n_channels"])
        live_time = float(meta["live_time_s"])
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header value") from exc
    if len(rows) != n_channels:
        raise FormatError(
            f"{path}: header declares {n_channels} channels, file has {len(rows)}"
        )
    counts = np.zeros(n_channels, dtype=np.int64)
    for position, (index, count) in enumerate(rows):
        if index != position:
            raise FormatError(f"{path}: channel indices must run 0..{n_channels - 1}")
        if count < 0:
            raise FormatError(f"{path}: negative count in channel {index}")
        counts[index] = count
    return Histogram(
        channel_width=width, counts=counts, live_time=live_time, metadata=meta
    )


def write_report(path, entries: dict, tables=None, comments=()) -> None:
    """Write a pals-report v1 file.

    ``entries`` maps keys to scalars; ``tables`` maps table names to
    (column_names, rows) pairs appended as table blocks.
    """
    lines = [_REPORT_MAGIC]
    for comment in comments:
        lines.append(f"# {comment}")
    for key, value in entries.items():
        _check_meta_token(key, "report key")
        lines.append(f"{key} = {format_value(value)}")
    for name, (columns, rows) in (tables or {}).items():
        lines.append(f"# table: {name}")
        lines.append(f"# columns: {' '.join(columns)}")
        for row in rows:
            lines.append(" ".join(format_value(v) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_report(path):
    """Parse a pals-report v1 file into (entries, tables).

    Entries come back as strings; table cells as floats.
    """
    entries = {}
    tables = {}
    current = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("table:"):
                    name = body.partition(":")[2].strip()
                    current = {"columns": None, "rows": []}
                    tables[name] = current
                elif body.startswith("columns:") and current is not None:
                    current["columns"] = body.partition(":")[2].split()
                continue
            if "=" in line:
                key, _, value = line.partition("=")
                entries[key.strip()] = value.strip()
                continue
            if current is None:
                raise FormatError(f"{path}:{lineno}: data row outside a table block")
            try:
                current["rows"].append([float(v) for v in line.split()])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-numeric table row") from exc
    for name, block in tables.items():
        tables[name] = (block["columns"], block["rows"])
    return entries, tables
