"""Named sub-seeds so every stochastic stage can be rerun on its own."""
import hashlib


def sub_seed(seed, *names):
    """Stable 32-bit seed derived from ``seed`` and a path of names."""
    key = ":".join([str(int(seed))] + [str(n) for n in names]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "little")
