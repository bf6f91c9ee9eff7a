"""Seeding scheme: every random stream in the package derives from one
u64 root seed through numpy SeedSequence spawn keys.

Streams are addressed as (domain, *indices):
  domain 0: parameter initialization
  domain 1: synthetic data, indexed by shape number
  domain 2: per-epoch shuffling, indexed by epoch
  domain 3: evaluation / miscellaneous

Identical (seed, domain, indices) always reproduces the same stream.
"""

import numpy as np

DOMAIN_INIT = 0
DOMAIN_DATA = 1
DOMAIN_SHUFFLE = 2
DOMAIN_MISC = 3


def stream(seed, domain, *indices):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(domain, *indices)))
