"""Independent numerical oracles shared across the test suite.

Everything here is implemented from first principles (series-free Bessel
evaluation, dense kernel-matrix Gaussian-process regression, a textbook
scalar Kalman filter, Gauss-Hermite quadrature) so the code under test
is checked against routes it does not share.
"""

from __future__ import annotations

import math

import numpy as np


def bessel_i_oracle(order: int, x: float, depth: int | None = None) -> float:
    """I_order(x) via Miller's backward recurrence with sum normalisation.

    Ratios r_j = I_{j+1}/I_j follow the continued fraction
    r_j = 1 / (2(j+1)/x + r_{j+1}); the absolute scale comes from
    e^x = I_0 + 2 sum_{j>=1} I_j.
    """
    if x == 0.0:
        return 1.0 if order == 0 else 0.0
    if depth is None:
        depth = 60 + int(2 * x) + 2 * order
    ratios = np.zeros(depth + 1)
    for j in range(depth - 1, -1, -1):
        ratios[j] = 1.0 / (2.0 * (j + 1) / x + ratios[j + 1])
    rel = np.ones(depth + 1)
    for j in range(1, depth + 1):
        rel[j] = rel[j - 1] * ratios[j - 1]
    i0 = math.exp(x) / (1.0 + 2.0 * rel[1:].sum())
    return float(i0 * rel[order])


def gp_regression_oracle(kernel_fn, train_t, train_y, noise_var, test_t):
    """Dense GP regression: posterior mean and variance at test points."""
    train_t = np.asarray(train_t, dtype=float)
    test_t = np.asarray(test_t, dtype=float)
    gram = kernel_fn(np.abs(train_t[:, None] - train_t[None, :]))
    cross = kernel_fn(np.abs(test_t[:, None] - train_t[None, :]))
    lhs = gram + noise_var * np.eye(train_t.shape[0])
    alpha = np.linalg.solve(lhs, np.asarray(train_y, dtype=float))
    mean = cross @ alpha
    var = kernel_fn(np.zeros(test_t.shape[0])) - np.einsum(
        "ij,ji->i", cross, np.linalg.solve(lhs, cross.T)
    )
    return mean, var


def gp_two_point_conditional(kernel_fn, t_star, t1, t2, f1, f2):
    """Mean/variance of f(t_star) given exact values at two points."""
    gram = np.array(
        [
            [kernel_fn(0.0), kernel_fn(abs(t1 - t2))],
            [kernel_fn(abs(t1 - t2)), kernel_fn(0.0)],
        ]
    )
    k_star = np.array([kernel_fn(abs(t_star - t1)), kernel_fn(abs(t_star - t2))])
    w = np.linalg.solve(gram, k_star)
    mean = float(w @ np.array([f1, f2]))
    var = float(kernel_fn(0.0) - k_star @ w)
    return mean, var


def scalar_kalman_oracle(ts, ys, lengthscale, variance, noise_var):
    """Textbook Kalman filter for the exponential-kernel scalar chain."""
    means, variances = [], []
    m, p = 0.0, variance
    prev = None
    for t, y in zip(ts, ys):
        if prev is not None:
            a = math.exp(-(t - prev) / lengthscale)
            m = a * m
            p = a * a * p + variance * (1.0 - a * a)
        gain = p / (p + noise_var)
        m = m + gain * (y - m)
        p = (1.0 - gain) * p
        means.append(m)
        variances.append(p)
        prev = t
    return np.asarray(means), np.asarray(variances)


def gauss_hermite_2d(mu_a, var_a, mu_b, var_b, fn, n_nodes=32):
    """E[fn(a, b)] for independent Gaussians a, b by tensor-product quadrature."""
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    a = mu_a + math.sqrt(2.0 * var_a) * nodes[:, None]
    b = mu_b + math.sqrt(2.0 * var_b) * nodes[None, :]
    w = (weights[:, None] * weights[None, :]) / math.pi
    return float((w * fn(a, b)).sum())


def gaussian_crps_exact(mean: float, std: float, truth: float) -> float:
    """Closed-form CRPS of a Gaussian forecast."""
    from math import erf, exp, pi, sqrt

    z = (truth - mean) / std
    pdf = exp(-0.5 * z * z) / sqrt(2.0 * pi)
    cdf = 0.5 * (1.0 + erf(z / sqrt(2.0)))
    return std * (z * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / sqrt(pi))
