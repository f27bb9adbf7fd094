"""Gaussian and Gamma primitives for closed-form message passing.

Multivariate Gaussians live in two interchangeable parameterisations:
moment form (mean, covariance) for reading expectations, and natural
form (precision, precision-weighted mean) where multiplying densities is
componentwise addition.  Messages are unnormalised and may carry
rank-deficient precisions -- a likelihood term that constrains only a
subspace is represented exactly and never inverted on its own.

Gamma factors for the noise precision are tracked as (shape, rate) with
messages expressed as additive increments, so merging the prior with one
increment of shape 1/2 per observation reproduces the exact conjugate
update for a Gaussian precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GaussianMoment",
    "GaussianNatural",
    "GammaParams",
    "JointState",
    "ImproperDistributionError",
    "to_natural",
    "to_moment",
    "multiply",
    "divide",
    "gamma_merge",
    "gamma_unmerge",
    "project_marginal",
    "psd_floor_warnings",
    "reset_psd_floor_warnings",
]

_SYM_TOL = 1e-12

# Incremented when a covariance needed an eigenvalue floor larger than
# 1e-6 of its trace; readable via psd_floor_warnings().
_psd_floor_warnings = 0


def psd_floor_warnings() -> int:
    return _psd_floor_warnings


def reset_psd_floor_warnings() -> None:
    global _psd_floor_warnings
    _psd_floor_warnings = 0


class ImproperDistributionError(ValueError):
    """A natural-form object does not describe a normalisable density."""


def _check_symmetric(mat: np.ndarray, what: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{what} must be a square matrix, got shape {mat.shape}")
    scale = max(1.0, float(np.abs(mat).max(initial=0.0)))
    if np.abs(mat - mat.T).max(initial=0.0) > _SYM_TOL * scale:
        raise ValueError(f"{what} is not symmetric within {_SYM_TOL}")
    return mat


@dataclass(frozen=True, eq=False)
class GaussianMoment:
    """Gaussian in moment form: mean vector and symmetric PSD covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = _check_symmetric(np.atleast_2d(self.cov), "covariance")
        if cov.shape[0] != mean.shape[0]:
            raise ValueError(
                f"mean dim {mean.shape[0]} does not match covariance {cov.shape}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True, eq=False)
class GaussianNatural:
    """Gaussian in natural form: precision and shift (precision @ mean).

    The precision may be rank-deficient or indefinite; only conversion to
    moment form requires positive definiteness.
    """

    precision: np.ndarray
    shift: np.ndarray

    def __post_init__(self) -> None:
        shift = np.atleast_1d(np.asarray(self.shift, dtype=float))
        prec = _check_symmetric(np.atleast_2d(self.precision), "precision")
        if prec.shape[0] != shift.shape[0]:
            raise ValueError(
                f"shift dim {shift.shape[0]} does not match precision {prec.shape}"
            )
        object.__setattr__(self, "precision", prec)
        object.__setattr__(self, "shift", shift)

    @property
    def dim(self) -> int:
        return self.shift.shape[0]

    @classmethod
    def zero(cls, dim: int) -> "GaussianNatural":
        """The multiplicative identity message."""
        return cls(np.zeros((dim, dim)), np.zeros(dim))


@dataclass(frozen=True)
class GammaParams:
    """Gamma distribution with shape > 0 and rate > 0."""

    shape: float
    rate: float

    def __post_init__(self) -> None:
        if not (self.shape > 0.0 and self.rate > 0.0):
            raise ImproperDistributionError(
                f"Gamma requires shape > 0 and rate > 0, got ({self.shape}, {self.rate})"
            )

    @property
    def mean(self) -> float:
        return self.shape / self.rate


def to_natural(g: GaussianMoment) -> GaussianNatural:
    """Invert the covariance; requires a positive definite input."""
    prec = _symmetric_inverse(g.cov, "covariance")
    return GaussianNatural(precision=prec, shift=prec @ g.mean)


def to_moment(g: GaussianNatural) -> GaussianMoment:
    """Invert the precision; raises if the density is improper."""
    cov = _symmetric_inverse(g.precision, "precision")
    return GaussianMoment(mean=cov @ g.shift, cov=cov)


def _symmetric_inverse(mat: np.ndarray, what: str) -> np.ndarray:
    global _psd_floor_warnings
    eigvals, eigvecs = np.linalg.eigh(mat)
    d = mat.shape[0]
    floor = 1e-12 * max(float(np.trace(mat)), 0.0) / d
    if eigvals[0] <= floor:
        raise ImproperDistributionError(
            f"improper distribution: {what} has minimum eigenvalue "
            f"{eigvals[0]:.3e} (threshold {floor:.3e})"
        )
    inv = (eigvecs / eigvals) @ eigvecs.T
    return 0.5 * (inv + inv.T)


def repair_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetrise and floor eigenvalues at zero, counting large repairs."""
    global _psd_floor_warnings
    sym = 0.5 * (mat + mat.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals[0] >= 0.0:
        return sym
    if -eigvals[0] > 1e-6 * max(float(np.trace(sym)), 0.0):
        _psd_floor_warnings += 1
    out = (eigvecs * np.maximum(eigvals, 0.0)) @ eigvecs.T
    return 0.5 * (out + out.T)


def multiply(a: GaussianNatural, b: GaussianNatural) -> GaussianNatural:
    """Product of two unnormalised Gaussians: natural parameters add."""
    return GaussianNatural(a.precision + b.precision, a.shift + b.shift)


def divide(a: GaussianNatural, b: GaussianNatural) -> GaussianNatural:
    """Quotient of two unnormalised Gaussians: natural parameters subtract.

    The result may be indefinite (a cavity); validity is the caller's
    concern at the point of moment conversion.
    """
    return GaussianNatural(a.precision - b.precision, a.shift - b.shift)


def gamma_merge(q: GammaParams, shape_inc: float, rate_inc: float) -> GammaParams:
    """Absorb an additive Gamma message; raises if the result is improper."""
    shape = q.shape + shape_inc
    rate = q.rate + rate_inc
    if not (shape > 0.0 and rate > 0.0):
        raise ImproperDistributionError(
            f"message drove posterior improper: shape {shape}, rate {rate}"
        )
    return GammaParams(shape, rate)


def gamma_unmerge(q: GammaParams, shape_inc: float, rate_inc: float) -> GammaParams:
    """Remove a previously merged Gamma message."""
    return gamma_merge(q, -shape_inc, -rate_inc)


@dataclass(frozen=True, eq=False)
class JointState:
    """Joint Gaussian over all factors' companion states at one instant.

    Factors are mutually independent, so the joint is stored as per-factor
    moment blocks; ``projection`` stacks each factor's read-out row
    block-diagonally, mapping the concatenated state to the vector of
    factor values.
    """

    blocks: tuple[GaussianMoment, ...]
    projection: np.ndarray  # (n_factors, total_dim)

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))
        proj = np.atleast_2d(np.asarray(self.projection, dtype=float))
        total = sum(b.dim for b in self.blocks)
        if proj.shape != (len(self.blocks), total):
            raise ValueError(
                f"projection shape {proj.shape} does not match "
                f"{len(self.blocks)} blocks of total dim {total}"
            )
        object.__setattr__(self, "projection", proj)

    @property
    def n_factors(self) -> int:
        return len(self.blocks)

    @property
    def total_dim(self) -> int:
        return sum(b.dim for b in self.blocks)

    def block_slices(self) -> list[slice]:
        out, start = [], 0
        for b in self.blocks:
            out.append(slice(start, start + b.dim))
            start += b.dim
        return out

    def full_mean(self) -> np.ndarray:
        return np.concatenate([b.mean for b in self.blocks])

    def full_cov(self) -> np.ndarray:
        total = self.total_dim
        out = np.zeros((total, total))
        for sl, b in zip(self.block_slices(), self.blocks):
            out[sl, sl] = b.cov
        return out

    def marginal_value_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and (diagonal) variance vector of the factor values."""
        means = np.empty(self.n_factors)
        variances = np.empty(self.n_factors)
        for k, (sl, b) in enumerate(zip(self.block_slices(), self.blocks)):
            row = self.projection[k, sl]
            means[k] = row @ b.mean
            variances[k] = row @ b.cov @ row
        return means, variances


def project_marginal(state: JointState) -> GaussianMoment:
    """Marginal law of the factor values read out of the joint state.

    Block independence makes the marginal covariance diagonal.
    """
    means, variances = state.marginal_value_moments()
    return GaussianMoment(mean=means, cov=np.diag(variances))
