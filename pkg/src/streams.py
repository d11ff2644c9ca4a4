"""
Random streams.

Every stochastic operation takes an explicit numpy Generator built on the
counter-based Philox bit generator. Child streams are derived from a
(seed, key, key, ...) tuple through SeedSequence, so the stream a piece of
work sees depends only on its position in the computation, never on the
order in which workers run.
"""

import numpy as np


def make_rng(seed, *keys):
    """Generator for `seed` and an optional path of integer keys."""
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def as_generator(seed_or_rng):
    """Accept an int seed or an existing Generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    if seed_or_rng is None:
        raise ValueError("an explicit seed or Generator is required")
    return make_rng(seed_or_rng)


def derive_seed(rng):
    """Draw a 63-bit integer seed from a stream (one draw)."""
    return int(rng.integers(0, 2**63 - 1))


def child_seeds(seed, *keys, n=2):
    """`n` integer seeds for the work item at (seed, *keys)."""
    entropy = [int(seed)] + [int(k) for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(n, dtype=np.uint64)
    return [int(s) for s in state]
