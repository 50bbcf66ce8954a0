"""Counter-based random streams keyed by (seed, purpose, worker, round).

Every random draw in a simulation comes from a stream derived
from the master seed and a small integer key, never from shared
global state. Two configurations that differ only in lambda/nu
therefore see bit-identical compressor draws, and a round can be
replayed in isolation.
"""

import numpy as np

from efbv.errors import ConfigurationError

# stream purposes
WORKER = 0
ROUND = 1
PROBE = 2
PARTITION = 3
DATA = 4


def stream(
    master_seed: int,
    purpose: int = WORKER,
    worker: int = 0,
    round_index: int = 0,
) -> np.random.Generator:
    """Return the Philox stream for one (purpose, worker, round) key.

    Args:
        master_seed: Nonnegative master seed of the run.
        purpose: One of the module-level purpose tags.
        worker: Worker index (0 for round-level streams).
        round_index: Round counter t.

    Returns:
        A fresh ``numpy.random.Generator`` positioned at the start
        of the keyed stream.
    """
    if master_seed < 0 or worker < 0 or round_index < 0:
        raise ConfigurationError(
            "seed, worker and round_index must be nonnegative, "
            f"got ({master_seed}, {worker}, {round_index})"
        )
    key = np.random.SeedSequence(
        [master_seed, purpose, worker, round_index]
    )
    return np.random.Generator(np.random.Philox(key))


def worker_stream(
    master_seed: int, worker: int, round_index: int
) -> np.random.Generator:
    """Stream feeding worker *worker*'s compressor at round t."""
    return stream(master_seed, WORKER, worker, round_index)


def round_stream(
    master_seed: int, round_index: int
) -> np.random.Generator:
    """Round-level stream (shared participation subsets)."""
    return stream(master_seed, ROUND, 0, round_index)
