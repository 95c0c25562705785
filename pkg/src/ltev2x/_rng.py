import zlib

import numpy as np


def substream(seed: int, name: str, *key: int) -> np.random.Generator:
    """Independent generator for one concern (``"drop"``, ``"ul_errors"``, ...).

    Streams are keyed by name, not by creation order, so adding or removing a
    consumer never shifts the draws of another.
    """
    entropy = [int(seed), zlib.crc32(name.encode()), *map(int, key)]
    return np.random.default_rng(entropy)
