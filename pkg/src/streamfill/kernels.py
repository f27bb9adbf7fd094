"""Stationary kernels and their exact linear state-space equivalents.

A zero-mean Gaussian process with a stationary kernel over time is the
stationary solution of a linear SDE driven by white noise.  This module
builds that representation for the two kernel families used by the
imputation engine:

* Matern with smoothness 1/2 (exponential) or 3/2 -- a companion-form
  drift whose first state component is the process value.
* Exactly periodic -- a truncated harmonic expansion, one independent
  2-d oscillator per harmonic plus a static zero-frequency component.

Discretising over a time gap ``delta`` gives a Gauss-Markov transition
``z(t + delta) = A z(t) + noise`` with ``A = exp(F * delta)`` (computed
in closed form per family; every block is at most 2x2) and process noise
taken from the stationarity identity ``Q = P_inf - A P_inf A^T``, which
is exact for stationary priors and avoids numerical quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "Matern",
    "Periodic",
    "KernelSpec",
    "FactorSSM",
    "Transition",
    "bessel_i",
    "build_ssm",
    "transition",
    "kernel_eval",
]

_SUPPORTED_NU = (0.5, 1.5)


def _require_positive(**named: float) -> None:
    for name, value in named.items():
        if not (value > 0.0 and math.isfinite(value)):
            raise ValueError(f"{name} must be a positive finite number, got {value!r}")


@dataclass(frozen=True, eq=False)
class Matern:
    """Matern kernel with half-integer smoothness.

    Only ``nu`` in {1/2, 3/2} is supported; these admit exact 1-d and 2-d
    state-space forms.  ``lengthscale`` is in time units.
    """

    nu: float
    lengthscale: float
    variance: float

    def __post_init__(self) -> None:
        if self.nu not in _SUPPORTED_NU:
            raise ValueError(
                f"unsupported Matern smoothness nu={self.nu!r}: only 1/2 and 3/2 "
                "have closed-form state-space equivalents here"
            )
        _require_positive(lengthscale=self.lengthscale, variance=self.variance)


@dataclass(frozen=True, eq=False)
class Periodic:
    """Exactly periodic kernel, truncated to ``harmonics`` oscillators.

    ``period`` is in time units; ``lengthscale`` is the dimensionless
    roughness parameter inside the exponentiated-sine form.  Larger
    ``harmonics`` tightens the truncation (the harmonic weights decay as
    modified-Bessel coefficients).
    """

    period: float
    lengthscale: float
    variance: float
    harmonics: int = 7

    def __post_init__(self) -> None:
        _require_positive(
            period=self.period, lengthscale=self.lengthscale, variance=self.variance
        )
        if not isinstance(self.harmonics, int) or self.harmonics < 1:
            raise ValueError(f"harmonics must be an integer >= 1, got {self.harmonics!r}")


KernelSpec = Union[Matern, Periodic]


@dataclass(frozen=True, eq=False)
class FactorSSM:
    """State-space form of one kernel: drift, noise loading and stationary law.

    ``projection`` is the 1 x state_dim row that reads the process value
    out of the companion state.
    """

    spec: KernelSpec
    state_dim: int
    drift: np.ndarray  # F, (d, d)
    noise_gain: np.ndarray  # L, (d, w)
    noise_density: float  # q_s, spectral density of the driving white noise
    stationary_cov: np.ndarray  # P_inf, (d, d)
    projection: np.ndarray  # H, (1, d)


@dataclass(frozen=True, eq=False)
class Transition:
    """Discrete-time Gauss-Markov transition over a fixed gap."""

    matrix: np.ndarray  # A = exp(F * delta)
    noise_cov: np.ndarray  # Q, symmetric PSD
    delta: float


def bessel_i(order: int, x: float, min_terms: int = 30) -> float:
    """Modified Bessel function of the first kind, I_order(x), by power series.

    Sums ``(x/2)^(2k+order) / (k! (k+order)!)`` until terms are negligible,
    with at least ``min_terms`` terms.  All terms are positive, so there is
    no cancellation; relative error is near machine precision for x <= 10.
    """
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    half = 0.5 * x
    term = half**order / math.factorial(order)
    total = term
    k = 1
    while k < min_terms or term > total * 1e-17:
        term *= half * half / (k * (k + order))
        total += term
        k += 1
        if k > 10_000:  # series always terminates long before this
            break
    return total


def _scaled_bessel_i(order: int, x: float) -> float:
    """I_order(x) * exp(-x), overflow-safe for large x.

    Folds the exponential into the leading series term so intermediate
    values stay bounded; falls back to the uniform asymptotic expansion
    when even the folded leading term would underflow.
    """
    if x > 650.0:
        # I_j(x) e^{-x} ~ (2 pi x)^{-1/2} (1 - (4j^2-1)/(8x) + ...)
        mu = 4.0 * order * order
        s = 1.0 - (mu - 1.0) / (8.0 * x) + (mu - 1.0) * (mu - 9.0) / (128.0 * x * x)
        return s / math.sqrt(2.0 * math.pi * x)
    half = 0.5 * x
    term = half**order / math.factorial(order) * math.exp(-x)
    total = term
    k = 1
    while k < 30 or term > total * 1e-17:
        term *= half * half / (k * (k + order))
        total += term
        k += 1
        if k > 10_000:
            break
    return total


def _harmonic_weights(spec: Periodic) -> np.ndarray:
    """Stationary variance of each harmonic block, index 0..harmonics."""
    x = spec.lengthscale**-2
    weights = np.empty(spec.harmonics + 1)
    weights[0] = _scaled_bessel_i(0, x)
    for j in range(1, spec.harmonics + 1):
        weights[j] = 2.0 * _scaled_bessel_i(j, x)
    return spec.variance * weights


def build_ssm(spec: KernelSpec) -> FactorSSM:
    """Construct the exact state-space equivalent of a kernel."""
    if isinstance(spec, Matern):
        ell, var = spec.lengthscale, spec.variance
        if spec.nu == 0.5:
            return FactorSSM(
                spec=spec,
                state_dim=1,
                drift=np.array([[-1.0 / ell]]),
                noise_gain=np.array([[1.0]]),
                noise_density=2.0 * var / ell,
                stationary_cov=np.array([[var]]),
                projection=np.array([[1.0]]),
            )
        lam = math.sqrt(3.0) / ell
        return FactorSSM(
            spec=spec,
            state_dim=2,
            drift=np.array([[0.0, 1.0], [-lam * lam, -2.0 * lam]]),
            noise_gain=np.array([[0.0], [1.0]]),
            noise_density=4.0 * lam**3 * var,
            stationary_cov=np.diag([var, lam * lam * var]),
            projection=np.array([[1.0, 0.0]]),
        )
    if isinstance(spec, Periodic):
        j_max = spec.harmonics
        dim = 1 + 2 * j_max
        weights = _harmonic_weights(spec)
        drift = np.zeros((dim, dim))
        stationary = np.zeros((dim, dim))
        projection = np.zeros((1, dim))
        stationary[0, 0] = weights[0]
        projection[0, 0] = 1.0
        for j in range(1, j_max + 1):
            i = 1 + 2 * (j - 1)
            omega = 2.0 * math.pi * j / spec.period
            drift[i, i + 1] = -omega
            drift[i + 1, i] = omega
            stationary[i, i] = weights[j]
            stationary[i + 1, i + 1] = weights[j]
            projection[0, i] = 1.0
        # The driving noise vanishes for exactly periodic sample paths; the
        # gain is kept as identity so the Lyapunov residual is well defined.
        return FactorSSM(
            spec=spec,
            state_dim=dim,
            drift=drift,
            noise_gain=np.eye(dim),
            noise_density=0.0,
            stationary_cov=stationary,
            projection=projection,
        )
    raise TypeError(f"unknown kernel spec type: {type(spec).__name__}")


def _transition_matrix(spec: KernelSpec, delta: float, dim: int) -> np.ndarray:
    if isinstance(spec, Matern):
        if spec.nu == 0.5:
            return np.array([[math.exp(-delta / spec.lengthscale)]])
        # Repeated eigenvalue -lam: exp(F t) = e^{-lam t} (I + (F + lam I) t).
        lam = math.sqrt(3.0) / spec.lengthscale
        decay = math.exp(-lam * delta)
        return decay * np.array(
            [
                [1.0 + lam * delta, delta],
                [-lam * lam * delta, 1.0 - lam * delta],
            ]
        )
    out = np.zeros((dim, dim))
    out[0, 0] = 1.0
    for j in range(1, spec.harmonics + 1):
        i = 1 + 2 * (j - 1)
        theta = 2.0 * math.pi * j * delta / spec.period
        c, s = math.cos(theta), math.sin(theta)
        out[i, i] = c
        out[i, i + 1] = -s
        out[i + 1, i] = s
        out[i + 1, i + 1] = c
    return out


def _floor_psd(mat: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues of a symmetric matrix to zero."""
    eigvals, eigvecs = np.linalg.eigh(mat)
    if eigvals[0] >= 0.0:
        return mat
    floored = (eigvecs * np.maximum(eigvals, 0.0)) @ eigvecs.T
    return 0.5 * (floored + floored.T)


def transition(ssm: FactorSSM, delta: float) -> Transition:
    """Discretise the SDE over a nonnegative time gap.

    The transition matrix uses the per-family closed form, and the process
    noise the stationarity identity; for periodic kernels the rotations
    preserve the stationary covariance exactly, so the noise is zero.
    """
    if delta < 0:
        raise ValueError(f"time gap must be nonnegative, got {delta}")
    matrix = _transition_matrix(ssm.spec, delta, ssm.state_dim)
    if isinstance(ssm.spec, Periodic):
        noise = np.zeros((ssm.state_dim, ssm.state_dim))
    else:
        pinf = ssm.stationary_cov
        noise = pinf - matrix @ pinf @ matrix.T
        noise = _floor_psd(0.5 * (noise + noise.T))
    return Transition(matrix=matrix, noise_cov=noise, delta=float(delta))


def kernel_eval(spec: KernelSpec, delta: float) -> float:
    """Exact kernel value at lag ``delta`` (test oracle for the SSM form)."""
    if delta < 0:
        raise ValueError(f"lag must be nonnegative, got {delta}")
    if isinstance(spec, Matern):
        if spec.nu == 0.5:
            return spec.variance * math.exp(-delta / spec.lengthscale)
        r = math.sqrt(3.0) * delta / spec.lengthscale
        return spec.variance * (1.0 + r) * math.exp(-r)
    s = math.sin(math.pi * delta / spec.period)
    return spec.variance * math.exp(-2.0 * s * s / spec.lengthscale**2)
