"""Deterministic seed derivation.

Every random stream in the package is seeded from a user seed plus a
purpose label, so adding or reordering one stage never shifts the draws
of another.
"""

import hashlib


def derive_seed(seed, name):
    """Stable 64-bit child seed from (seed, purpose name)."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
