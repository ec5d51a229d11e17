import zlib

import numpy as np

# Sub-stream names; consumers of one name never share draws with another.
CORPUS = "corpus"
MASK = "mask"
BATCH = "batch"
DROPOUT = "dropout"
INIT = "init"
SPLIT = "split"
GRID = "grid"
SLOTS = "slots"


def stream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """
    Independent generator for the sub-stream `name` of `seed`.

    :param seed: the run seed
    :param name: sub-stream name, e.g. "mask" or "dropout"
    :param keys: extra integer keys, e.g. a movie index or grid-cell index
    """
    spawn_key = (zlib.crc32(name.encode("utf-8")),) + tuple(int(k) for k in keys)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=spawn_key)))
