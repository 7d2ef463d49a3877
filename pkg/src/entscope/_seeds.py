"""Seed derivation shared by every stochastic component."""

import os

import numpy as np

SEED_ENV = "ENTSCOPE_SEED"
DEFAULT_SEED = 0


def derive_seed(seed, *keys):
    """Mix a master seed with integer keys into a child 64-bit seed.

    Uses numpy's SeedSequence hashing, so children of distinct key tuples
    are statistically independent and independent of evaluation order.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_for(seed, *keys):
    return np.random.default_rng(derive_seed(seed, *keys))


def resolve_seed(seed=None):
    """Explicit seed wins, then ``ENTSCOPE_SEED``, then the default."""
    if seed is not None:
        return int(seed)
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env.strip(), 0)
        except ValueError:
            raise ValueError(f"{SEED_ENV}={env!r} is not an integer") from None
    return DEFAULT_SEED
