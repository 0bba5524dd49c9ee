"""Named random substreams derived from a single master seed.

Every source of randomness in the package asks for a substream by name, so
one seed in a run manifest pins the whole experiment while keeping modules
decoupled from each other's draw order.
"""
import hashlib

import numpy as np
import torch


def substream_seed(master: int, *names) -> int:
    """Derive a 63-bit seed for the substream identified by ``names``."""
    key = "/".join([str(int(master)), *map(str, names)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


def np_rng(master: int, *names) -> np.random.Generator:
    return np.random.default_rng(substream_seed(master, *names))


def torch_generator(master: int, *names) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(substream_seed(master, *names))
    return gen
