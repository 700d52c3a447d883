"""Small shared helpers: seed derivation, file digests, duration parsing."""

from __future__ import annotations

import hashlib
from pathlib import Path

# Seeds for distinct consumers are derived by hashing, not by arithmetic
# offsets, so adding a consumer never shifts the draws of an existing one.


def derive_seed(seed: int, *tags: object) -> int:
    """Stable 32-bit seed for a named RNG stream under a master seed."""
    key = ":".join([str(int(seed))] + [str(t) for t in tags])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def parse_duration(value: str | float | int) -> float:
    """Parse a duration like '5s', '500ms', or a bare number of seconds."""
    if isinstance(value, (int, float)):
        seconds = float(value)
    else:
        text = value.strip().lower()
        if text.endswith("ms"):
            seconds = float(text[:-2]) / 1000.0
        elif text.endswith("s"):
            seconds = float(text[:-1])
        else:
            seconds = float(text)
    if seconds <= 0:
        raise ValueError(f"duration must be positive, got {value!r}")
    return seconds
