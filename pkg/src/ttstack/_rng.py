import hashlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def substream(seed: int, *names) -> np.random.Generator:
    """Independent generator for a named purpose under a root seed.

    ``substream(42, "init", "vit_a")`` never depends on which other streams
    were created, so adding a learner leaves the others untouched.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *map(_key, names)]))
