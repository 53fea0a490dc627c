"""Counter-based seed derivation shared by every randomized step.

``sub_seed(master, a, b, ...)`` hashes the master seed together with integer
counters through :class:`numpy.random.SeedSequence`, so each (stream, fold)
pair gets an independent 64-bit seed that does not depend on execution order.
"""
import numpy as np

__all__ = ["sub_seed"]


def sub_seed(master, *counters):
    """Derive a 64-bit child seed from ``master`` and integer counters."""
    ss = np.random.SeedSequence([int(master), *map(int, counters)])
    return int(ss.generate_state(1, np.uint64)[0])
