"""Splittable seeded random streams.

Every random draw in the package comes from a stream addressed by
``(master_seed, *key)`` where the key is a tuple of small integers naming the
consumer, e.g. ``(STREAM_PROTECT, round, client_id)``. Streams are derived via
``numpy.random.SeedSequence(entropy=master_seed, spawn_key=key)``, so

* the same (master_seed, key) always yields the same stream,
* distinct keys yield statistically independent streams,
* adding trials / sweep points / rounds never perturbs existing streams.

Stream namespace constants are defined here so keys never collide.
"""

from __future__ import annotations

import numpy as np

# Top-level stream namespaces. First key element.
STREAM_DATA = 1          # dataset generation: (STREAM_DATA, client_id)
STREAM_INIT = 2          # model parameter init: (STREAM_INIT,)
STREAM_PROTECT = 3       # protection noise: (STREAM_PROTECT, round, client_id)
STREAM_ATTACK = 4        # attack init and search: (STREAM_ATTACK, ...)
STREAM_EVAL = 5          # fresh evaluation draws: (STREAM_EVAL, ...)
STREAM_ESTIMATE = 6      # constant estimation sampling: (STREAM_ESTIMATE, ...)
STREAM_TRIAL = 7         # per-trial master seeds: (STREAM_TRIAL, sweep_index, trial_index)
STREAM_MECH = 8          # mechanism setup (HE permutation/offset): (STREAM_MECH,)


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Return the Generator for the stream addressed by (master_seed, *key)."""
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(seq))


def trial_seed(master_seed: int, sweep_index: int, trial_index: int) -> int:
    """Derive a 63-bit per-trial master seed.

    Trials are addressed, not enumerated: appending trials or sweep points
    never changes earlier trials' seeds.
    """
    g = stream(master_seed, STREAM_TRIAL, sweep_index, trial_index)
    return int(g.integers(0, 2**63 - 1))
