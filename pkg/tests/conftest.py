"""Shared builders for the test suite."""

import numpy as np

from fairbeam import model


def rayleigh_instance(nt, nu, groups, seed, pac=None, noise=1.0):
    """Seeded Rayleigh instance with unit weights and uniform noise."""
    ch = model.gen_rayleigh(nt, nu, seed)
    return model.make_instance(ch, groups, pac=pac,
                               noise=np.full(nu, float(noise)))


def two_groups(nu):
    """Users 0..nu-1 split into two equal contiguous groups."""
    half = nu // 2
    return [tuple(range(half)), tuple(range(half, nu))]
