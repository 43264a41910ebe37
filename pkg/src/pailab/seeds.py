"""Purpose-tagged seed derivation.

``derive_seed(master, "init", 3)`` hashes the triple, so new purposes or new
indices never shift the seeds already in use.
"""
import hashlib


def derive_seed(master: int, purpose: str, index: int = 0) -> int:
    digest = hashlib.sha256(f"{int(master)}/{purpose}/{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)
