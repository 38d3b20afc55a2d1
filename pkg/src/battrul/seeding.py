"""Child-seed derivation.

``derive_seed(base, index)`` hashes the pair through numpy's ``SeedSequence``
and returns the first 64-bit word of its generated state. The result depends
only on ``(base, index)``, so work items can run in any order.
"""

import numpy as np


def derive_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([int(base), int(index)]).generate_state(1, np.uint64)[0])


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))
