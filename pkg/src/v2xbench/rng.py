"""Keyed random streams.

Every random draw in the package comes from a Philox generator keyed by a
tuple such as ``(seed, scene_id, frame_index, channel)``.  Streams never
depend on the order in which frames, points or repetitions are processed,
so results are identical for any thread count.  Per-object draws take the
object's original index as the position within its channel stream.
"""

from __future__ import annotations

import enum
import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


class Channel(enum.IntEnum):
    OBJ_ROT = 1
    OBJ_TRANS = 2
    FRAME_ROT = 3
    FRAME_TRANS = 4
    DROPOUT = 5
    CAMERA = 6
    TOY_DATA = 7
    TOY_INIT = 8
    REPETITION = 9
    GRADCHECK = 10


def _key_word(part) -> list[int]:
    if isinstance(part, (bool, np.bool_)):
        return [int(part)]
    if isinstance(part, (int, np.integer)):
        v = int(part)
        if v < 0:
            v &= _MASK64
        return [v & 0xFFFFFFFF, (v >> 32) & 0xFFFFFFFF]
    if isinstance(part, str):
        digest = hashlib.blake2b(part.encode("utf-8"), digest_size=8).digest()
        return list(np.frombuffer(digest, dtype="<u4").astype(np.uint64).tolist())
    raise TypeError(f"unsupported key part {part!r}")


def keyed_rng(*key) -> np.random.Generator:
    """Generator for an arbitrary key of ints/strings (order matters)."""
    words: list[int] = []
    for part in key:
        words.extend(_key_word(part))
        words.append(0x9E3779B9)  # separator so (1, 23) != (12, 3)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def derive_seed(*key) -> int:
    """64-bit seed derived from a key, e.g. ``derive_seed(seed, rep)``."""
    words: list[int] = []
    for part in key:
        words.extend(_key_word(part))
        words.append(0x9E3779B9)
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)
