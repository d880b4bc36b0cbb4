"""Small shared helpers: seed derivation, canonical JSON, run-length encoding."""

from __future__ import annotations

import hashlib
import json
import math
from typing import Any


def derive_seed(*parts: object) -> int:
    """Deterministically derive an RNG seed from arbitrary parts.

    Uses SHA-256 so the result is stable across processes and Python
    versions (unlike the builtin hash()).
    """
    digest = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def _round_floats(obj: Any, ndigits: int) -> Any:
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            raise ValueError("non-finite float cannot be serialized canonically")
        r = round(obj, ndigits)
        return 0.0 if r == 0 else r
    if isinstance(obj, dict):
        return {k: _round_floats(v, ndigits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, ndigits) for v in obj]
    return obj


def canonical_json(obj: Any, ndigits: int = 6) -> bytes:
    """Serialize to canonical JSON: sorted keys, compact separators, floats
    rounded to ndigits decimals. Equal values always produce equal bytes."""
    cooked = _round_floats(obj, ndigits)
    return json.dumps(cooked, sort_keys=True, separators=(",", ":")).encode("utf-8")


def rle_encode(flat_indices) -> list[list[int]]:
    """Encode a sorted sequence of integer indices as [start, length] runs."""
    runs: list[list[int]] = []
    prev = None
    for idx in flat_indices:
        idx = int(idx)
        if prev is not None and idx == prev + 1:
            runs[-1][1] += 1
        else:
            runs.append([idx, 1])
        prev = idx
    return runs


def rle_decode(runs) -> list[int]:
    out: list[int] = []
    for start, length in runs:
        out.extend(range(int(start), int(start) + int(length)))
    return out
