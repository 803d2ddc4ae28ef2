"""Named random sub-streams derived from one master seed.

Each stream is keyed by a stable hash of its name, so adding a new stream
never changes the numbers drawn by existing ones.
"""
import zlib

import numpy as np

STREAMS = ("problem", "truth", "noise", "init-ensemble", "gsg-probes")


def stream_key(name):
    return zlib.crc32(name.encode("utf-8"))


def substream(seed, name):
    """Generator for the sub-stream ``name`` of master ``seed``."""
    seq = np.random.SeedSequence([int(seed), stream_key(name)])
    return np.random.Generator(np.random.PCG64(seq))


def substream_seed(seed, name):
    """32-bit integer seed for APIs that only take ints."""
    seq = np.random.SeedSequence([int(seed), stream_key(name)])
    return int(seq.generate_state(1, np.uint32)[0])
