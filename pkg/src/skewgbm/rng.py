"""Counter-based random streams.

Every uniform variate is addressed by ``(seed, step, path)``: the Philox key
is derived from ``(seed, step)`` and the counter from the path index.  Draws
therefore do not depend on the order in which paths or steps are generated,
nor on how paths are split across workers.
"""

from __future__ import annotations

import numpy as np

_BLOCK = 4  # uint64 outputs per Philox counter increment
_TWO_M53 = 2.0**-53


def _key(seed: int, step: int) -> np.ndarray:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(step)])
    return ss.generate_state(2, dtype=np.uint64)


def step_uniforms(seed: int, step: int, start: int, count: int) -> np.ndarray:
    """Uniforms in (0, 1) for paths ``start .. start+count-1`` at ``step``."""
    if count <= 0:
        return np.empty(0)
    block, offset = divmod(int(start), _BLOCK)
    bitgen = np.random.Philox(key=_key(seed, step), counter=[block, 0, 0, 0])
    raw = bitgen.random_raw(offset + count)[offset:]
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    """A plain Generator for i.i.d. sampling tasks keyed by ``(seed, stream)``."""
    # tag 2**32 keeps these streams disjoint from the per-step keys
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, 1 << 32, int(stream)])
    return np.random.Generator(np.random.Philox(ss))
