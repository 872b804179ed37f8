"""Canonical one-line JSON encoding shared by the wire protocol and replay files.

Top-level "type" comes first, every other key is alphabetical, objects are
minified, and each record ends with a single newline. The same bytes always
come out for the same values, so captures and replays diff cleanly.
"""

from __future__ import annotations

import json
from typing import Any


def _normalize(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _normalize(value[k]) for k in sorted(value)}
    if isinstance(value, (list, tuple)):
        return [_normalize(v) for v in value]
    if isinstance(value, float) and value.is_integer() and abs(value) < 2**53:
        # 5.0 and 5 must encode identically or round-trips are not byte-stable
        return int(value)
    return value


def canonical_line(obj: dict[str, Any]) -> str:
    """Encode one record as minified JSON with "type" first, newline-terminated."""
    ordered: dict[str, Any] = {}
    if "type" in obj:
        ordered["type"] = obj["type"]
    for key in sorted(obj):
        if key != "type":
            ordered[key] = _normalize(obj[key])
    return json.dumps(ordered, separators=(",", ":"), ensure_ascii=False) + "\n"


def canonical_bytes(obj: dict[str, Any]) -> bytes:
    return canonical_line(obj).encode("utf-8")
