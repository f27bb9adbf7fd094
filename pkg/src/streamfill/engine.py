"""Streaming inference: per-timestamp message passing over factor states.

Each observed value couples one channel's weight vector, the factor
values at that instant, and the shared noise precision.  The likelihood
term is approximated by closed-form conditional-moment messages: a Gamma
increment for the precision, a Gaussian message on the channel weights,
and a Gaussian message on the factor values lifted into the companion
state through the read-out rows.  Merging is natural-parameter addition
against the predicted state (an information-form Kalman update), the
weight posteriors, and the precision posterior.

Within one timestamp the messages can be refined over several inner
epochs: the first epoch merges the fresh messages outright, later epochs
blend ``rho * fresh + (1 - rho) * previous`` after dividing the previous
epoch's contribution back out (the merge always restarts from the
pre-timestamp posteriors, which is the same thing).  Message computation
for distinct channels is a pure function of one immutable snapshot, so
entries commute within a timestamp.

A backward sweep (`smooth`) turns the filtered marginals into full-data
marginals factor by factor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .data import SeriesData
from .gaussians import (
    GammaParams,
    GaussianMoment,
    ImproperDistributionError,
    JointState,
    gamma_merge,
    to_natural,
)
from .kernels import FactorSSM, Matern, Periodic, Transition, build_ssm, transition

__all__ = [
    "ModelConfig",
    "ChannelWeights",
    "ObservationBatch",
    "BatchMessages",
    "ModelPosterior",
    "TransitionCache",
    "init",
    "predict_state",
    "compute_messages",
    "step",
    "smooth",
    "run_offline",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    """Model structure and inference controls.

    ``weight_init_scale`` sets the magnitude of the random initial weight
    means; a bilinear model started at exactly zero means is a fixed
    point of the updates (every message shift is proportional to the
    other block's mean), so the symmetry must be broken at init.
    ``fix_weights`` pins every weight at one and skips weight updates;
    ``fixed_noise_precision`` pins the noise precision likewise.
    """

    n_channels: int
    n_trend: int
    n_seasonal: int
    trend_kernel: Matern | None = None
    seasonal_kernel: Periodic | None = None
    noise_prior_shape: float = 1.0
    noise_prior_rate: float = 1.0
    damping_epochs: int = 3
    damping_rho: float = 0.5
    jitter: float = 1e-9
    fix_weights: bool = False
    fixed_noise_precision: float | None = None
    weight_init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_channels < 1:
            raise ValueError(f"need at least one channel, got {self.n_channels}")
        if self.n_trend < 0 or self.n_seasonal < 0 or self.n_trend + self.n_seasonal < 1:
            raise ValueError(
                f"need at least one factor: n_trend={self.n_trend}, "
                f"n_seasonal={self.n_seasonal}"
            )
        if self.n_trend > 0 and not isinstance(self.trend_kernel, Matern):
            raise ValueError("trend factors require a Matern trend_kernel")
        if self.n_seasonal > 0 and not isinstance(self.seasonal_kernel, Periodic):
            raise ValueError("seasonal factors require a Periodic seasonal_kernel")
        if not (self.noise_prior_shape > 0 and self.noise_prior_rate > 0):
            raise ValueError("noise prior shape and rate must be positive")
        if self.damping_epochs < 1:
            raise ValueError("damping_epochs must be >= 1")
        if not (0.0 < self.damping_rho <= 1.0):
            raise ValueError("damping_rho must be in (0, 1]")
        if self.jitter < 0.0:
            raise ValueError("jitter must be nonnegative")
        if self.fixed_noise_precision is not None and not self.fixed_noise_precision > 0:
            raise ValueError("fixed_noise_precision must be positive when set")

    @property
    def n_factors(self) -> int:
        return self.n_trend + self.n_seasonal


@dataclass(eq=False)
class ChannelWeights:
    """Per-channel Gaussian weight posteriors, stored as stacked arrays."""

    means: np.ndarray  # (D, K)
    covs: np.ndarray  # (D, K, K)

    def channel(self, d: int) -> GaussianMoment:
        return GaussianMoment(mean=self.means[d], cov=self.covs[d])

    def copy(self) -> "ChannelWeights":
        return ChannelWeights(self.means.copy(), self.covs.copy())


@dataclass(frozen=True, eq=False)
class ObservationBatch:
    """Observations arriving at one timestamp; may be empty."""

    t: float
    channels: np.ndarray  # (B,) distinct channel indices
    values: np.ndarray  # (B,)

    def __post_init__(self) -> None:
        channels = np.asarray(self.channels, dtype=int).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if channels.shape != values.shape:
            raise ValueError("channels and values must have equal length")
        if channels.size and (channels < 0).any():
            raise ValueError("channel indices must be nonnegative")
        if np.unique(channels).size != channels.size:
            raise ValueError("batch channels must be distinct")
        if values.size and not np.isfinite(values).all():
            raise ValueError("observed values must be finite")
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return self.channels.size

    @classmethod
    def empty(cls, t: float) -> "ObservationBatch":
        return cls(t=t, channels=np.empty(0, dtype=int), values=np.empty(0))


@dataclass(eq=False)
class BatchMessages:
    """Per-entry likelihood messages for one timestamp.

    The state message lives in factor-value space; lifting through the
    read-out rows is linear, so the lift of the (damped) sum equals the
    sum of lifts and is applied once at merge time.
    """

    channels: np.ndarray  # (B,)
    tau_shape: np.ndarray  # (B,)
    tau_rate: np.ndarray  # (B,)
    weight_precision: np.ndarray  # (B, K, K)
    weight_shift: np.ndarray  # (B, K)
    value_precision: np.ndarray  # (B, K, K)
    value_shift: np.ndarray  # (B, K)

    def lift_state_message(self, projection: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Summed state message in companion-state coordinates."""
        total_prec = projection.T @ self.value_precision.sum(axis=0) @ projection
        total_shift = projection.T @ self.value_shift.sum(axis=0)
        return total_prec, total_shift

    def is_finite(self) -> np.ndarray:
        """Entry-wise finiteness of every message component."""
        flat_ok = [
            np.isfinite(self.tau_shape),
            np.isfinite(self.tau_rate),
            np.isfinite(self.weight_precision).all(axis=(1, 2)),
            np.isfinite(self.weight_shift).all(axis=1),
            np.isfinite(self.value_precision).all(axis=(1, 2)),
            np.isfinite(self.value_shift).all(axis=1),
        ]
        return np.logical_and.reduce(flat_ok)


class TransitionCache:
    """Per-gap transitions memoised on the gap rounded to 12 significant digits."""

    def __init__(self) -> None:
        self._store: dict[tuple[int, float], Transition] = {}

    def get(self, ssm: FactorSSM, delta: float) -> Transition:
        key = (id(ssm), float(f"{delta:.12g}"))
        hit = self._store.get(key)
        if hit is None:
            hit = transition(ssm, key[1])
            self._store[key] = hit
        return hit

    def __len__(self) -> int:
        return len(self._store)


class ModelPosterior:
    """Running posterior over weights, noise precision and factor states.

    Mutated in place by `step`/`smooth`; `copy_for_eval` takes an
    independent snapshot that evaluation can smooth and read while the
    live chain keeps filtering.
    """

    def __init__(
        self,
        config: ModelConfig,
        factor_ssms: tuple[FactorSSM, ...],
        projection: np.ndarray,
        weights: ChannelWeights,
        tau: GammaParams,
    ) -> None:
        self.config = config
        self.factor_ssms = factor_ssms
        self.projection = projection
        self.weights = weights
        self.tau = tau
        self.timestamps: list[float] = []
        self.filtered_states: list[JointState] = []
        self.smoothed_states: list[JointState] | None = None
        self.transitions = TransitionCache()
        self.diagnostics = {"rho_halvings": 0, "skipped_entries": 0}

    @property
    def n_factors(self) -> int:
        return len(self.factor_ssms)

    @property
    def total_dim(self) -> int:
        return sum(s.state_dim for s in self.factor_ssms)

    def stationary_state(self) -> JointState:
        blocks = [
            GaussianMoment(np.zeros(s.state_dim), s.stationary_cov)
            for s in self.factor_ssms
        ]
        return JointState(blocks=tuple(blocks), projection=self.projection)

    def effective_noise(self, ssm: FactorSSM, tr: Transition) -> np.ndarray:
        """Process noise as used in filtering: periodic blocks get jitter.

        Exactly periodic transitions are noiseless, which makes long
        chains numerically singular; a diagonal of jitter * variance
        keeps them invertible.
        """
        if isinstance(ssm.spec, Periodic) and self.config.jitter > 0:
            bump = self.config.jitter * ssm.spec.variance
            return tr.noise_cov + bump * np.eye(ssm.state_dim)
        return tr.noise_cov

    def copy_for_eval(self) -> "ModelPosterior":
        out = ModelPosterior(
            config=self.config,
            factor_ssms=self.factor_ssms,
            projection=self.projection,
            weights=self.weights.copy(),
            tau=self.tau,
        )
        out.timestamps = list(self.timestamps)
        out.filtered_states = list(self.filtered_states)
        out.smoothed_states = list(self.smoothed_states) if self.smoothed_states else None
        out.transitions = self.transitions  # entries are immutable; sharing is safe
        out.diagnostics = dict(self.diagnostics)
        return out


def _build_projection(factor_ssms: tuple[FactorSSM, ...]) -> np.ndarray:
    total = sum(s.state_dim for s in factor_ssms)
    projection = np.zeros((len(factor_ssms), total))
    start = 0
    for k, ssm in enumerate(factor_ssms):
        projection[k, start : start + ssm.state_dim] = ssm.projection[0]
        start += ssm.state_dim
    return projection


def init(config: ModelConfig) -> ModelPosterior:
    """Fresh posterior at the priors, with seeded random weight means."""
    ssms: list[FactorSSM] = []
    if config.n_trend:
        trend = build_ssm(config.trend_kernel)
        ssms.extend([trend] * config.n_trend)
    if config.n_seasonal:
        seasonal = build_ssm(config.seasonal_kernel)
        ssms.extend([seasonal] * config.n_seasonal)
    factor_ssms = tuple(ssms)
    projection = _build_projection(factor_ssms)
    k = config.n_factors
    if config.fix_weights:
        means = np.ones((config.n_channels, k))
        covs = np.zeros((config.n_channels, k, k))
    else:
        rng = np.random.default_rng(config.seed)
        means = config.weight_init_scale * rng.standard_normal((config.n_channels, k))
        covs = np.broadcast_to(np.eye(k), (config.n_channels, k, k)).copy()
    if config.fixed_noise_precision is not None:
        tau = GammaParams(shape=config.fixed_noise_precision, rate=1.0)
    else:
        tau = GammaParams(shape=config.noise_prior_shape, rate=config.noise_prior_rate)
    return ModelPosterior(
        config=config,
        factor_ssms=factor_ssms,
        projection=projection,
        weights=ChannelWeights(means=means, covs=covs),
        tau=tau,
    )


def predict_state(posterior: ModelPosterior, prev: JointState, delta: float) -> JointState:
    """Propagate the joint state forward over a positive gap."""
    if not delta > 0:
        raise ValueError(f"prediction gap must be positive, got {delta}")
    blocks = []
    for ssm, block in zip(posterior.factor_ssms, prev.blocks):
        tr = posterior.transitions.get(ssm, delta)
        mean = tr.matrix @ block.mean
        cov = tr.matrix @ block.cov @ tr.matrix.T + posterior.effective_noise(ssm, tr)
        blocks.append(GaussianMoment(mean, 0.5 * (cov + cov.T)))
    return JointState(blocks=tuple(blocks), projection=posterior.projection)


def _fresh_messages(
    channels: np.ndarray,
    values: np.ndarray,
    w_means: np.ndarray,
    w_covs: np.ndarray,
    state: JointState,
    tau_mean: float,
) -> BatchMessages:
    mu_v, var_v = state.marginal_value_moments()
    e_vv = np.diag(var_v) + np.outer(mu_v, mu_v)
    e_uu = w_covs + w_means[:, :, None] * w_means[:, None, :]
    predicted = w_means @ mu_v
    tau_rate = 0.5 * (
        values**2 - 2.0 * values * predicted + np.einsum("bij,ij->b", e_uu, e_vv)
    )
    b = values.shape[0]
    return BatchMessages(
        channels=channels,
        tau_shape=np.full(b, 0.5),
        tau_rate=tau_rate,
        weight_precision=tau_mean * np.broadcast_to(e_vv, (b,) + e_vv.shape).copy(),
        weight_shift=tau_mean * values[:, None] * mu_v[None, :],
        value_precision=tau_mean * e_uu,
        value_shift=tau_mean * values[:, None] * w_means,
    )


def compute_messages(
    batch: ObservationBatch,
    state_prior: JointState,
    weights: ChannelWeights,
    tau: GammaParams,
) -> BatchMessages:
    """Closed-form likelihood messages for every entry of a batch.

    All expectations are taken against the supplied posteriors, so the
    result is a pure function of one snapshot and entries are mutually
    independent.
    """
    return _fresh_messages(
        batch.channels,
        batch.values,
        weights.means[batch.channels],
        weights.covs[batch.channels],
        state_prior,
        tau.mean,
    )


def _blend_into(msgs: BatchMessages, fresh: BatchMessages, rho: float) -> None:
    # old + rho * (fresh - old): keeps components that never change exact.
    for name in (
        "tau_shape",
        "tau_rate",
        "weight_precision",
        "weight_shift",
        "value_precision",
        "value_shift",
    ):
        arr = getattr(msgs, name)
        arr += rho * (getattr(fresh, name) - arr)


def _state_natural(state: JointState) -> tuple[np.ndarray, np.ndarray]:
    total = state.total_dim
    precision = np.zeros((total, total))
    shift = np.zeros(total)
    for sl, block in zip(state.block_slices(), state.blocks):
        nat = to_natural(block)
        precision[sl, sl] = nat.precision
        shift[sl] = nat.shift
    return precision, shift


def _require_finite(msgs: BatchMessages) -> None:
    if not msgs.is_finite().all():
        raise ImproperDistributionError("non-finite message encountered")


def _epoch_sweep(
    posterior: ModelPosterior,
    batch: ObservationBatch,
    pred: JointState,
    rho: float,
) -> tuple[GammaParams, np.ndarray, np.ndarray, JointState]:
    """Damped inner epochs for one timestamp, merging from the bases.

    Returns the merged precision posterior, the merged weight means and
    covariances for the batch channels, and the updated state.
    """
    cfg = posterior.config
    proj = posterior.projection
    w_mean_base = posterior.weights.means[batch.channels]
    w_cov_base = posterior.weights.covs[batch.channels]
    if not cfg.fix_weights:
        w_prec_base = np.linalg.inv(w_cov_base)
        w_prec_base = 0.5 * (w_prec_base + w_prec_base.transpose(0, 2, 1))
        w_shift_base = np.einsum("bij,bj->bi", w_prec_base, w_mean_base)
    pred_prec, pred_shift = _state_natural(pred)
    tau_base = posterior.tau

    msgs: BatchMessages | None = None
    state_cur = pred
    w_mean_cur, w_cov_cur = w_mean_base.copy(), w_cov_base.copy()
    tau_cur = tau_base
    for _ in range(cfg.damping_epochs):
        fresh = _fresh_messages(
            batch.channels, batch.values, w_mean_cur, w_cov_cur, state_cur, tau_cur.mean
        )
        if msgs is None:
            msgs = fresh
        else:
            _blend_into(msgs, fresh, rho)
        _require_finite(msgs)
        if cfg.fixed_noise_precision is None:
            tau_cur = gamma_merge(
                tau_base, float(msgs.tau_shape.sum()), float(msgs.tau_rate.sum())
            )
        if not cfg.fix_weights:
            w_prec = w_prec_base + msgs.weight_precision
            np.linalg.cholesky(w_prec)  # positive-definiteness guard
            w_cov_cur = np.linalg.inv(w_prec)
            w_cov_cur = 0.5 * (w_cov_cur + w_cov_cur.transpose(0, 2, 1))
            w_mean_cur = np.einsum(
                "bij,bj->bi", w_cov_cur, w_shift_base + msgs.weight_shift
            )
        lift_prec, lift_shift = msgs.lift_state_message(proj)
        lam = pred_prec + lift_prec
        np.linalg.cholesky(lam)  # positive-definiteness guard
        cov_full = np.linalg.inv(lam)
        cov_full = 0.5 * (cov_full + cov_full.T)
        mean_full = cov_full @ (pred_shift + lift_shift)
        blocks = []
        for sl in pred.block_slices():
            sub = cov_full[sl, sl]
            blocks.append(GaussianMoment(mean_full[sl], 0.5 * (sub + sub.T)))
        state_cur = JointState(blocks=tuple(blocks), projection=proj)
    return tau_cur, w_mean_cur, w_cov_cur, state_cur


def step(posterior: ModelPosterior, batch: ObservationBatch) -> ModelPosterior:
    """Absorb one timestamp: predict, approximate messages, merge.

    An empty batch performs pure prediction, which registers the
    timestamp as an evaluation grid point.  If merging goes improper the
    damping factor is halved (up to 3 retries), then offending entries
    are dropped with a logged diagnostic.
    """
    cfg = posterior.config
    if batch.size and int(batch.channels.max()) >= cfg.n_channels:
        raise ValueError(
            f"batch channel {int(batch.channels.max())} out of range for "
            f"{cfg.n_channels} channels"
        )
    if posterior.timestamps:
        last = posterior.timestamps[-1]
        if not batch.t > last:
            raise ValueError(
                f"timestamps must be strictly increasing: got {batch.t} after {last}"
            )
        pred = predict_state(posterior, posterior.filtered_states[-1], batch.t - last)
    else:
        pred = posterior.stationary_state()

    if batch.size == 0:
        posterior.timestamps.append(float(batch.t))
        posterior.filtered_states.append(pred)
        return posterior

    merged = None
    sub = batch
    rho = cfg.damping_rho
    for _ in range(4):
        try:
            merged = _epoch_sweep(posterior, sub, pred, rho)
            break
        except (ImproperDistributionError, np.linalg.LinAlgError):
            posterior.diagnostics["rho_halvings"] += 1
            rho *= 0.5
    if merged is None:
        fresh = compute_messages(sub, pred, posterior.weights, posterior.tau)
        ok = fresh.is_finite()
        dropped = int(sub.size - ok.sum())
        if dropped:
            posterior.diagnostics["skipped_entries"] += dropped
            logger.warning(
                "dropping %d observation(s) at t=%g after repeated improper merges",
                dropped,
                batch.t,
            )
            sub = ObservationBatch(sub.t, sub.channels[ok], sub.values[ok])
        if sub.size:
            try:
                merged = _epoch_sweep(posterior, sub, pred, cfg.damping_rho)
            except (ImproperDistributionError, np.linalg.LinAlgError):
                posterior.diagnostics["skipped_entries"] += sub.size
                logger.warning(
                    "skipping all %d observation(s) at t=%g: merge stayed improper",
                    sub.size,
                    batch.t,
                )
                merged = None

    if merged is None:
        state = pred
    else:
        tau_new, w_mean, w_cov, state = merged
        posterior.tau = tau_new
        if not cfg.fix_weights:
            posterior.weights.means[sub.channels] = w_mean
            posterior.weights.covs[sub.channels] = w_cov
    posterior.timestamps.append(float(batch.t))
    posterior.filtered_states.append(state)
    return posterior


def smooth(posterior: ModelPosterior) -> ModelPosterior:
    """Backward sweep producing full-data marginals for every timestamp."""
    states = posterior.filtered_states
    if not states:
        raise ValueError("nothing to smooth: no timestamps processed")
    n = len(states)
    result: list[JointState | None] = [None] * n
    result[-1] = states[-1]
    ts = posterior.timestamps
    proj = posterior.projection
    for i in range(n - 2, -1, -1):
        delta = ts[i + 1] - ts[i]
        blocks = []
        for k, ssm in enumerate(posterior.factor_ssms):
            tr = posterior.transitions.get(ssm, delta)
            noise = posterior.effective_noise(ssm, tr)
            filt = states[i].blocks[k]
            nxt = result[i + 1].blocks[k]
            a_cov = tr.matrix @ filt.cov
            pred_cov = a_cov @ tr.matrix.T + noise
            pred_cov = 0.5 * (pred_cov + pred_cov.T)
            try:
                gain = np.linalg.solve(pred_cov, a_cov).T
            except np.linalg.LinAlgError:
                bump = 1e-9 * max(float(np.trace(pred_cov)), 1e-30) / pred_cov.shape[0]
                try:
                    gain = np.linalg.solve(pred_cov + bump * np.eye(pred_cov.shape[0]), a_cov).T
                except np.linalg.LinAlgError as exc:
                    raise RuntimeError(
                        f"smoother innovation covariance singular at index {i}, "
                        f"factor {k} (gap {delta:g})"
                    ) from exc
            mean = filt.mean + gain @ (nxt.mean - tr.matrix @ filt.mean)
            cov = filt.cov + gain @ (nxt.cov - pred_cov) @ gain.T
            blocks.append(GaussianMoment(mean, 0.5 * (cov + cov.T)))
        result[i] = JointState(blocks=tuple(blocks), projection=proj)
    posterior.smoothed_states = result
    return posterior


def batch_at(data: SeriesData, index: int) -> ObservationBatch:
    """The observations of one series column as a batch."""
    channels = np.flatnonzero(data.mask[:, index])
    return ObservationBatch(
        t=float(data.timestamps[index]),
        channels=channels,
        values=data.values[channels, index],
    )


def run_offline(data: SeriesData, config: ModelConfig) -> ModelPosterior:
    """Single pass over every timestamp, then the backward sweep."""
    if data.n_timestamps == 0:
        raise ValueError("empty series")
    if data.n_channels != config.n_channels:
        raise ValueError(
            f"config expects {config.n_channels} channels, data has {data.n_channels}"
        )
    posterior = init(config)
    for n in range(data.n_timestamps):
        step(posterior, batch_at(data, n))
    return smooth(posterior)
