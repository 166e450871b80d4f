"""Gaussian tail probability Q and its inverse.

Both wrap scipy's normal-CDF routines (C erfc under the hood), accurate to
better than 1e-14 absolute over the ranges used here.
"""

import numpy as np
from scipy.special import ndtr, ndtri


def q(u):
    """Upper-tail probability Q(u) = Pr[N(0,1) > u]. Vectorized."""
    return ndtr(-np.asarray(u, dtype=float))


def q_inv(p):
    """Inverse of ``q``: returns u such that Q(u) = p, for p in (0, 1)."""
    return -ndtri(p)
