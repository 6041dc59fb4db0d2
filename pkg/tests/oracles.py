"""Independent reference computations used as test oracles.

These deliberately avoid the package's grids and interpolation: everything is
direct Gauss-Hermite quadrature with scipy's logsumexp.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import logsumexp


def gh(order: int = 201):
    z, w = hermegauss(order)
    return z, w / w.sum()


def log_cosh(x):
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2 * ax)) - math.log(2)


def nested_parisi_p(xi_prime, phi, h, m, q, order: int = 201) -> float:
    """Brute-force tensor quadrature of the step recursion.

    Builds h + sum_l sigma_l z_l on the full (k+1)-dimensional tensor grid and
    integrates level by level from the top.
    """
    z, w = gh(order)
    k = len(m) - 1
    sig = [math.sqrt(max(xi_prime(q[l + 1]) - xi_prime(q[l]), 0.0)) for l in range(k + 1)]
    x = np.asarray(float(h))
    for l in range(k + 1):
        x = x[..., None] + sig[l] * z
    vals = phi(x)
    for l in range(k, -1, -1):
        if m[l] == 0:
            vals = vals @ w
        else:
            vals = logsumexp(m[l] * vals, b=w, axis=-1) / m[l]
    return float(vals)


def one_level_f(m: float, h: float = 0.0, sigma: float = 1.0, phi=log_cosh, order: int = 201) -> float:
    """(1/m) log E exp(m phi(h + sigma z))."""
    z, w = gh(order)
    vals = phi(h + sigma * z)
    if m == 0:
        return float(vals @ w)
    return float(logsumexp(m * vals, b=w) / m)


def richardson_derivative(fn, x: float, h: float = 1e-3) -> float:
    d1 = (fn(x + h) - fn(x - h)) / (2 * h)
    d2 = (fn(x + h / 2) - fn(x - h / 2)) / h
    return (4 * d2 - d1) / 3


def expect_gaussian(fn, mean: float = 0.0, sd: float = 1.0, order: int = 201) -> float:
    z, w = gh(order)
    return float(fn(mean + sd * z) @ w)
