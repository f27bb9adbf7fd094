"""Probabilistic prediction at stored and in-between timestamps.

A channel value is the inner product of that channel's weight vector and
the factor values, both Gaussian and independent under the posterior, so
the predictive mean and variance are closed form.  At a timestamp the
engine never processed, the factor state is reconstructed from the two
neighbouring smoothed states by merging the forward and backward
transition densities in natural form -- conditioning on the neighbour
means only, which keeps the reconstruction local and cheap.

Extrapolation outside the processed span is not supported.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .engine import ModelPosterior
from .gaussians import GaussianMoment, JointState
from .kernels import FactorSSM, Periodic

__all__ = [
    "PredictiveDist",
    "interpolate_state",
    "predict",
    "sample",
    "predict_grid",
    "predict_cells",
    "sample_cells",
]


@dataclass(frozen=True, eq=False)
class PredictiveDist:
    """Predictive law of one channel at one time.

    ``components`` holds the per-factor weighted contributions
    (weight mean times factor mean), which sum to ``mean``.
    """

    mean: float
    variance: float
    components: np.ndarray | None = None


def _interp_noise(ssm: FactorSSM, tr, jitter: float) -> np.ndarray:
    return tr.noise_cov + jitter * np.eye(ssm.state_dim)


def interpolate_state(
    t_star: float,
    left: tuple[float, JointState],
    right: tuple[float, JointState],
    ssms: tuple[FactorSSM, ...],
    jitter: float = 1e-9,
) -> JointState:
    """Reconstruct the joint state strictly between two smoothed neighbours.

    Per factor block, with forward and backward transitions (A1, Q1) and
    (A2, Q2), the merged natural parameters are

        precision = Q1^-1 + A2^T Q2^-1 A2
        shift     = Q1^-1 A1 m_left + A2^T Q2^-1 m_right

    A diagonal of ``jitter`` is added to both noise covariances before
    inversion so vanishing gaps stay well posed.
    """
    from .kernels import transition  # local import avoids cycle at module load

    (t_left, state_left), (t_right, state_right) = left, right
    if not (t_left < t_star < t_right):
        raise ValueError(
            f"interpolation time {t_star} must lie strictly between "
            f"{t_left} and {t_right}"
        )
    blocks = []
    for ssm, bl, br in zip(ssms, state_left.blocks, state_right.blocks):
        fwd = transition(ssm, t_star - t_left)
        bwd = transition(ssm, t_right - t_star)
        q1_inv = np.linalg.inv(_interp_noise(ssm, fwd, jitter))
        q2_inv = np.linalg.inv(_interp_noise(ssm, bwd, jitter))
        precision = q1_inv + bwd.matrix.T @ q2_inv @ bwd.matrix
        shift = q1_inv @ (fwd.matrix @ bl.mean) + bwd.matrix.T @ (q2_inv @ br.mean)
        cov = np.linalg.inv(0.5 * (precision + precision.T))
        cov = 0.5 * (cov + cov.T)
        blocks.append(GaussianMoment(cov @ shift, cov))
    return JointState(blocks=tuple(blocks), projection=state_left.projection)


def _state_at(posterior: ModelPosterior, t: float) -> JointState:
    if posterior.smoothed_states is None:
        raise ValueError("posterior has no smoothed states; run smooth() first")
    ts = posterior.timestamps
    if not ts:
        raise ValueError("posterior has processed no timestamps")
    if t < ts[0] or t > ts[-1]:
        raise ValueError(
            f"extrapolation unsupported: {t} outside processed span "
            f"[{ts[0]}, {ts[-1]}]"
        )
    i = bisect.bisect_left(ts, t)
    if i < len(ts) and ts[i] == t:
        return posterior.smoothed_states[i]
    return interpolate_state(
        t,
        (ts[i - 1], posterior.smoothed_states[i - 1]),
        (ts[i], posterior.smoothed_states[i]),
        posterior.factor_ssms,
    )


def _moments(
    posterior: ModelPosterior, d: int, state: JointState, include_noise: bool
) -> tuple[float, float, np.ndarray]:
    mu_v, var_v = state.marginal_value_moments()
    m = posterior.weights.means[d]
    v = posterior.weights.covs[d]
    mean = float(m @ mu_v)
    # Var(u.v) for independent Gaussians, written without cancellation:
    # tr(V S) + mu^T V mu + m^T S m  with S diagonal here.
    variance = float(
        (np.diag(v) + m * m) @ var_v + mu_v @ v @ mu_v
    )
    if include_noise:
        variance += posterior.tau.rate / posterior.tau.shape
    return mean, variance, m * mu_v


def predict(
    d: int,
    t: float,
    posterior: ModelPosterior,
    include_noise: bool = True,
) -> PredictiveDist:
    """Predictive mean/variance for channel ``d`` at time ``t``.

    ``include_noise`` adds the plug-in observation-noise variance (the
    inverse of the posterior-mean precision).
    """
    if not 0 <= d < posterior.config.n_channels:
        raise ValueError(f"channel {d} out of range")
    state = _state_at(posterior, t)
    mean, variance, components = _moments(posterior, d, state, include_noise)
    return PredictiveDist(mean=mean, variance=variance, components=components)


def sample(
    d: int,
    t: float,
    posterior: ModelPosterior,
    n_samples: int,
    seed: int,
    include_noise: bool = True,
    sample_noise_precision: bool = False,
) -> np.ndarray:
    """Draw predictive samples: weight draw times factor draw plus noise.

    Deterministic for a given seed.  By default the noise scale is the
    plug-in posterior mean; ``sample_noise_precision`` draws a fresh
    precision from its Gamma posterior per sample instead.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if not 0 <= d < posterior.config.n_channels:
        raise ValueError(f"channel {d} out of range")
    rng = np.random.default_rng(seed)
    state = _state_at(posterior, t)
    mu_v, var_v = state.marginal_value_moments()
    m = posterior.weights.means[d]
    v = posterior.weights.covs[d]
    u = rng.multivariate_normal(m, v, size=n_samples, method="eigh")
    vals = mu_v + np.sqrt(np.maximum(var_v, 0.0)) * rng.standard_normal(
        (n_samples, mu_v.shape[0])
    )
    out = np.einsum("sk,sk->s", u, vals)
    if include_noise:
        if sample_noise_precision:
            tau_draw = rng.gamma(posterior.tau.shape, 1.0 / posterior.tau.rate, n_samples)
            out += rng.standard_normal(n_samples) / np.sqrt(tau_draw)
        else:
            out += np.sqrt(posterior.tau.rate / posterior.tau.shape) * rng.standard_normal(
                n_samples
            )
    return out


def predict_grid(
    posterior: ModelPosterior,
    timestamps: np.ndarray,
    include_noise: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised predictions for every channel at each timestamp.

    Returns ``(means, variances, components)`` with shapes (D, N), (D, N)
    and (D, K, N).
    """
    cfg = posterior.config
    w_mean = posterior.weights.means  # (D, K)
    w_cov = posterior.weights.covs  # (D, K, K)
    w_diag = np.einsum("dkk->dk", w_cov)
    noise = posterior.tau.rate / posterior.tau.shape if include_noise else 0.0
    n = len(timestamps)
    means = np.empty((cfg.n_channels, n))
    variances = np.empty((cfg.n_channels, n))
    components = np.empty((cfg.n_channels, cfg.n_factors, n))
    for j, t in enumerate(np.asarray(timestamps, dtype=float)):
        state = _state_at(posterior, float(t))
        mu_v, var_v = state.marginal_value_moments()
        means[:, j] = w_mean @ mu_v
        variances[:, j] = (
            (w_diag + w_mean**2) @ var_v
            + np.einsum("k,dkl,l->d", mu_v, w_cov, mu_v)
            + noise
        )
        components[:, :, j] = w_mean * mu_v[None, :]
    return means, variances, components


def _cell_factor_moments(
    posterior: ModelPosterior, cells: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-cell factor-value moments and channel indices for stored-grid cells."""
    if posterior.smoothed_states is None:
        raise ValueError("posterior has no smoothed states; run smooth() first")
    cells = np.asarray(cells, dtype=int)
    if cells.ndim != 2 or cells.shape[1] != 2 or cells.shape[0] == 0:
        raise ValueError("cells must be a nonempty (M, 2) array of (channel, index)")
    d_idx, n_idx = cells[:, 0], cells[:, 1]
    n_states = len(posterior.smoothed_states)
    if (n_idx < 0).any() or (n_idx >= n_states).any():
        raise ValueError("cell timestamp index out of range of the processed grid")
    if (d_idx < 0).any() or (d_idx >= posterior.config.n_channels).any():
        raise ValueError("cell channel index out of range")
    uniq, inverse = np.unique(n_idx, return_inverse=True)
    k = posterior.n_factors
    mu_u = np.empty((uniq.shape[0], k))
    var_u = np.empty((uniq.shape[0], k))
    for j, n in enumerate(uniq):
        mu_u[j], var_u[j] = posterior.smoothed_states[n].marginal_value_moments()
    return d_idx, n_idx, mu_u[inverse], var_u[inverse]


def predict_cells(
    posterior: ModelPosterior,
    cells: np.ndarray,
    include_noise: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Predictive means/variances at (channel, timestamp-index) cells.

    Cell indices refer to the posterior's own processed grid.
    """
    d_idx, _, mu, sv = _cell_factor_moments(posterior, cells)
    m = posterior.weights.means[d_idx]
    vc = posterior.weights.covs[d_idx]
    v_diag = np.einsum("mkk->mk", vc)
    means = np.einsum("mk,mk->m", m, mu)
    variances = ((v_diag + m * m) * sv).sum(axis=1) + np.einsum(
        "mk,mkl,ml->m", mu, vc, mu
    )
    if include_noise:
        variances = variances + posterior.tau.rate / posterior.tau.shape
    return means, variances


def sample_cells(
    posterior: ModelPosterior,
    cells: np.ndarray,
    n_samples: int,
    seed: int,
    include_noise: bool = True,
) -> np.ndarray:
    """Seeded predictive samples per cell; shape (M, n_samples)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    d_idx, _, mu, sv = _cell_factor_moments(posterior, cells)
    rng = np.random.default_rng(seed)
    m_cells, n_cells = mu.shape[0], n_samples
    k = posterior.n_factors
    # One matrix square root of each distinct channel's weight covariance.
    roots: dict[int, np.ndarray] = {}
    for d in np.unique(d_idx):
        eigvals, eigvecs = np.linalg.eigh(posterior.weights.covs[d])
        roots[int(d)] = eigvecs * np.sqrt(np.maximum(eigvals, 0.0))
    root_stack = np.stack([roots[int(d)] for d in d_idx])
    z_u = rng.standard_normal((m_cells, n_cells, k))
    z_v = rng.standard_normal((m_cells, n_cells, k))
    u = posterior.weights.means[d_idx][:, None, :] + np.einsum(
        "mkl,msl->msk", root_stack, z_u
    )
    vals = mu[:, None, :] + np.sqrt(np.maximum(sv, 0.0))[:, None, :] * z_v
    out = np.einsum("msk,msk->ms", u, vals)
    if include_noise:
        scale = np.sqrt(posterior.tau.rate / posterior.tau.shape)
        out += scale * rng.standard_normal((m_cells, n_cells))
    return out
