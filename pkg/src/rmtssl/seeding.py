"""Counter-based seed derivation.

Trial ``t`` of a run with master seed ``s`` uses the first 32-bit word of
``numpy.random.SeedSequence(s, spawn_key=(t,))`` (extra keys append to
``spawn_key``). Any subset of trials can therefore be re-run on its own.
"""

import numpy as np


def trial_seed(master_seed, *keys):
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
