"""Counter-based member streams.

Member ``i`` of a run with master seed ``s`` always reads the same Philox
stream, so ensembles can be sharded over any number of workers.
"""

import numpy as np

INIT = 0
NOISE = 1


def member_stream(seed: int, member: int, purpose: int = INIT) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(member), int(purpose)))
    key = ss.generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def member_streams(seed, members, purpose=INIT):
    return [member_stream(seed, m, purpose) for m in members]
