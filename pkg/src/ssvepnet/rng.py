"""Repo-wide random number generation.

Every stochastic component draws from a Philox counter-based generator so that
a single 64-bit seed reproduces a run exactly, independent of platform.
"""
import numpy as np


def make_rng(seed, *stream):
    """Return a ``numpy.random.Generator`` backed by Philox.

    Extra integers in ``stream`` select an independent sub-stream, e.g.
    ``make_rng(seed, fold_index)``.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(ss))
