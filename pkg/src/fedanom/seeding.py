"""Keyed derivation of component seeds from one experiment seed.

Every source of randomness in the package is seeded through
:func:`derive_seed`, so a single top-level integer pins down an entire
run (data generation, per-round participant sampling, per-tenant
shuffles, noise injection).
"""

import hashlib


def derive_seed(root: int, *parts) -> int:
    """Derive a 64-bit child seed from ``root`` and a label path.

    The derivation hashes the decimal root together with the label parts
    (e.g. ``derive_seed(42, "local_train", round_idx, tenant_id)``), so
    distinct components get independent, reproducible streams.
    """
    key = "/".join([str(int(root))] + [str(p) for p in parts])
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")
