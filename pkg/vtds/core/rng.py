"""
Counter-based random streams keyed by (seed, stream name, entity ids).

Every consumer derives its own Philox stream from the run seed and the id of
the entity it is generating, so results do not depend on iteration order or
on how work is split between threads.
"""

import zlib
from typing import Union

import numpy as np

MASK64 = (1 << 64) - 1


def _key_word(part: Union[int, str]) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & MASK64


def keyed_generator(seed: int, stream: str, *entity: Union[int, str]) -> np.random.Generator:
    """
    Build a generator whose Philox key is derived from the seed, a stream name
    and any number of entity ids.

    :param seed: The 64-bit run seed.
    :param stream: Name of the consumer, e.g. "grammar" or "props".
    :param entity: Ids identifying the entity (footprint id, segment index, ...).
    :return: A numpy Generator positioned at counter 0 of its stream.
    """
    words = [_key_word(seed), _key_word(stream)] + [_key_word(e) for e in entity]
    key = np.random.SeedSequence(words).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
