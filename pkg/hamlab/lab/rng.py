"""Counter-based random streams keyed by (seed, purpose, shard).

Every consumer asks for its own named stream, so adding a new consumer never
shifts the draws of an existing one.
"""
import zlib

import numpy as np

from .errors import ParameterError


def purpose_key(purpose):
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed, purpose, shard=0):
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(shard), purpose_key(purpose)))
    return np.random.Generator(np.random.Philox(seq))


def shard_sizes(n, shards):
    if shards < 1:
        raise ParameterError("shards must be >= 1")
    base, extra = divmod(int(n), int(shards))
    return [base + (1 if i < extra else 0) for i in range(shards)]


def standard_normal(seed, purpose, n, dim, shards=1):
    """Draw an (n, dim) block, shard by shard, in a fixed shard order."""
    blocks = []
    for shard, size in enumerate(shard_sizes(n, shards)):
        if size:
            blocks.append(stream(seed, purpose, shard).standard_normal((size, dim)))
    if not blocks:
        return np.zeros((0, dim))
    return np.concatenate(blocks, axis=0)


def mean_and_stderr(samples):
    """Sample mean along axis 0 with its standard error."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    mean = np.sum(samples, axis=0) / n
    if n < 2:
        return mean, np.zeros_like(mean)
    std = np.std(samples, axis=0, ddof=1)
    return mean, std / np.sqrt(n)
