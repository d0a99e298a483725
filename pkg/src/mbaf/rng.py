"""Seed derivation.

Every random stream in the package is derived from one top-level integer
seed through ``derive_seed(seed, tag, index)``: the tag names the purpose
(``"train-batch"``, ``"eval"``, ``"init"``, ...) and the index selects the
item (batch number, evaluation chunk, ...).  Derivation goes through
:class:`numpy.random.SeedSequence`, so streams for different tags or indices
are statistically independent and do not depend on the order in which they
are requested.
"""

from __future__ import annotations

import zlib

import numpy as np
import torch


def _tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def derive_seed(seed: int, tag: str, index: int = 0) -> int:
    """Return a 63-bit integer seed for ``(seed, tag, index)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_tag_key(tag), int(index)))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return int((int(hi) << 32 | int(lo)) & 0x7FFF_FFFF_FFFF_FFFF)


def torch_generator(seed: int, tag: str, index: int = 0) -> torch.Generator:
    gen = torch.Generator(device="cpu")
    gen.manual_seed(derive_seed(seed, tag, index))
    return gen


def numpy_generator(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, tag, index))
