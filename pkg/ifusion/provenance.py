from __future__ import annotations

import hashlib
import json
from typing import Any


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_canonical(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def derive_seed(seed: int, *tags: Any) -> int:
    """Child seed for a named sub-task, stable across runs and platforms."""
    digest = sha256_canonical({"seed": seed, "tags": list(tags)})
    return int(digest[:16], 16) & 0x7FFF_FFFF_FFFF_FFFF
