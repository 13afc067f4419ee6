"""Counter-based random number streams for reproducible particle simulations.

All simulation noise is drawn from Philox4x64 keyed by the master seed, with
the 256-bit counter partitioned as ``(draw, 0, channel, step)``.  The Gaussian
block for a given ``(step, channel)`` is therefore a pure function of the seed:
it does not depend on how many draws happened before, on thread count, or on
whether a second (coupled) ensemble consumes the same block.  Particle ``i``
owns lane ``i`` of every block, so its noise stream is fixed once the ensemble
size is fixed.

Channels:
    1   isotropic Brownian increments (the sqrt(alpha) noise)
    2   residual Brownian increments (driven through sigma_hat)
    >=8 auxiliary draws (initial sampling, bootstrap, optimizer starts)
"""

from __future__ import annotations

import numpy as np

CHANNEL_ISO = 1
CHANNEL_RESID = 2
CHANNEL_AUX = 8


def master_key(seed: int) -> np.ndarray:
    """Derive the 128-bit Philox key from a user-facing integer seed."""
    return np.random.SeedSequence(int(seed)).generate_state(2, np.uint64)


class NoiseField:
    """Reproducible Gaussian noise indexed by (step, channel, particle).

    ``normals(step, channel)`` returns the same ``(n, dim)`` array no matter
    how often or in which order it is called.  A coupled pair of ensembles
    shares one field so that both marginal processes see identical Brownian
    increments, as the reflection/synchronous couplings require.
    """

    def __init__(self, seed: int, n: int, dim: int):
        if n <= 0 or dim <= 0:
            raise ValueError("NoiseField requires n >= 1 and dim >= 1")
        self.seed = int(seed)
        self.n = int(n)
        self.dim = int(dim)
        self._key = master_key(seed)

    def _block_generator(self, step: int, channel: int) -> np.random.Generator:
        counter = np.array([0, 0, channel, step], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(counter=counter, key=self._key))

    def normals(self, step: int, channel: int) -> np.ndarray:
        """Standard-normal block of shape (n, dim) for one step and channel."""
        return self._block_generator(step, channel).standard_normal((self.n, self.dim))

    def generator(self, tag: int) -> np.random.Generator:
        """Auxiliary generator for one-shot draws (kept off the step channels)."""
        return self._block_generator(int(tag), CHANNEL_AUX)


def aux_generator(seed: int, tag: int = 0) -> np.random.Generator:
    """Stand-alone generator derived from (seed, tag), for non-step randomness.

    Lives in the counter region with word 1 set, which step-channel blocks
    never reach, so auxiliary draws cannot collide with simulation noise.
    """
    return np.random.Generator(
        np.random.Philox(
            counter=np.array([0, 1, tag, 0], dtype=np.uint64),
            key=master_key(seed),
        )
    )
