import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamfill import gaussians as ga
from streamfill.gaussians import (
    GammaParams,
    GaussianMoment,
    GaussianNatural,
    ImproperDistributionError,
    JointState,
    divide,
    gamma_merge,
    gamma_unmerge,
    multiply,
    project_marginal,
    to_moment,
    to_natural,
)


def random_spd(rng, dim, scale=1.0):
    a = rng.standard_normal((dim, dim))
    return scale * (a @ a.T + dim * np.eye(dim))


def random_natural(rng, dim):
    return GaussianNatural(
        precision=random_spd(rng, dim) - 0.5 * dim * np.eye(dim),
        shift=rng.standard_normal(dim),
    )


class TestConversions:
    def test_identity_covariance(self):
        nat = to_natural(GaussianMoment(np.zeros(2), np.eye(2)))
        np.testing.assert_allclose(nat.precision, np.eye(2))
        np.testing.assert_allclose(nat.shift, 0.0)

    def test_scalar_inverse(self):
        nat = to_natural(GaussianMoment([1.0], [[0.25]]))
        assert nat.precision[0, 0] == pytest.approx(4.0)
        assert nat.shift[0] == pytest.approx(4.0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6))
    def test_round_trip_on_random_spd(self, seed):
        rng = np.random.default_rng(seed)
        g = GaussianMoment(rng.standard_normal(5), random_spd(rng, 5))
        back = to_moment(to_natural(g))
        np.testing.assert_allclose(back.mean, g.mean, rtol=1e-9, atol=1e-9)
        np.testing.assert_allclose(back.cov, g.cov, rtol=1e-9, atol=1e-9)

    def test_singular_precision_raises(self):
        nat = GaussianNatural(np.zeros((2, 2)), np.zeros(2))
        with pytest.raises(ImproperDistributionError, match="improper"):
            to_moment(nat)

    def test_asymmetric_matrix_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            GaussianMoment(np.zeros(2), np.array([[1.0, 0.5], [0.2, 1.0]]))


class TestProductGroup:
    def test_zero_message_is_identity(self):
        rng = np.random.default_rng(0)
        x = random_natural(rng, 3)
        out = multiply(x, GaussianNatural.zero(3))
        np.testing.assert_array_equal(out.precision, x.precision)
        np.testing.assert_array_equal(out.shift, x.shift)

    def test_standard_normal_product(self):
        one = to_natural(GaussianMoment([0.0], [[1.0]]))
        prod = to_moment(multiply(one, one))
        assert prod.cov[0, 0] == pytest.approx(0.5)
        assert prod.mean[0] == pytest.approx(0.0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6))
    def test_divide_inverts_multiply(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_natural(rng, 4), random_natural(rng, 4)
        back = divide(multiply(a, b), b)
        np.testing.assert_allclose(back.precision, a.precision, atol=1e-12)
        np.testing.assert_allclose(back.shift, a.shift, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6))
    def test_associativity_and_commutativity(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (random_natural(rng, 3) for _ in range(3))
        lhs = multiply(multiply(a, b), c)
        rhs = multiply(a, multiply(b, c))
        np.testing.assert_allclose(lhs.precision, rhs.precision, atol=1e-12)
        np.testing.assert_allclose(lhs.shift, rhs.shift, atol=1e-12)
        ab, ba = multiply(a, b), multiply(b, a)
        np.testing.assert_allclose(ab.precision, ba.precision, atol=1e-12)

    def test_rank_deficient_messages_compose(self):
        # a message constraining only one direction is legal everywhere
        # except at moment conversion
        partial = GaussianNatural(np.diag([1.0, 0.0]), np.array([1.0, 0.0]))
        full = to_natural(GaussianMoment(np.zeros(2), np.eye(2)))
        merged = to_moment(multiply(full, partial))
        assert merged.cov[0, 0] == pytest.approx(0.5)
        assert merged.cov[1, 1] == pytest.approx(1.0)


class TestGamma:
    def test_additive_merge(self):
        out = gamma_merge(GammaParams(1.0, 1.0), 0.5, 0.3)
        assert (out.shape, out.rate) == (1.5, 1.3)

    def test_merge_then_unmerge_round_trips(self):
        q = GammaParams(2.0, 3.0)
        out = gamma_unmerge(gamma_merge(q, 0.7, 0.9), 0.7, 0.9)
        assert out.shape == pytest.approx(2.0, abs=1e-12)
        assert out.rate == pytest.approx(3.0, abs=1e-12)

    def test_shape_counts_half_per_observation(self):
        # matches the exact conjugate update for a known-mean Gaussian:
        # shape a0 + n/2, rate b0 + sum((y - mu)^2) / 2
        rng = np.random.default_rng(3)
        mu, tau_true = 0.7, 4.0
        ys = mu + rng.standard_normal(64) / np.sqrt(tau_true)
        q = GammaParams(1.0, 1.0)
        for y in ys:
            q = gamma_merge(q, 0.5, 0.5 * (y - mu) ** 2)
        assert q.shape == 1.0 + 64 / 2
        assert q.rate == pytest.approx(1.0 + 0.5 * np.sum((ys - mu) ** 2), rel=1e-12)

    def test_improper_result_raises(self):
        with pytest.raises(ImproperDistributionError, match="improper"):
            gamma_merge(GammaParams(1.0, 1.0), -2.0, 0.0)

    def test_mean(self):
        assert GammaParams(3.0, 6.0).mean == pytest.approx(0.5)


def single_factor_state(mean, cov, projection_row):
    block = GaussianMoment(mean, cov)
    return JointState(blocks=(block,), projection=np.atleast_2d(projection_row))


class TestProjectMarginal:
    def test_scalar_factor_passthrough(self):
        state = single_factor_state([2.0], [[3.0]], [1.0])
        out = project_marginal(state)
        assert out.mean[0] == pytest.approx(2.0)
        assert out.cov[0, 0] == pytest.approx(3.0)

    def test_companion_state_drops_derivative(self):
        state = single_factor_state([1.0, 5.0], np.diag([2.0, 7.0]), [1.0, 0.0])
        out = project_marginal(state)
        assert out.mean[0] == pytest.approx(1.0)
        assert out.cov[0, 0] == pytest.approx(2.0)

    def test_periodic_blocks_sum_first_components(self):
        # one periodic factor: static 0.5, oscillators [1, 0] and [-0.2, 3]
        blocks = (
            GaussianMoment([0.5], [[0.3]]),
            GaussianMoment([1.0, 0.0], 0.4 * np.eye(2)),
            GaussianMoment([-0.2, 3.0], 0.2 * np.eye(2)),
        )
        proj = np.array([[1.0, 1.0, 0.0, 1.0, 0.0]])
        # model as one factor: single projection row over the stacked blocks
        state = JointState(blocks=(GaussianMoment(
            np.concatenate([b.mean for b in blocks]),
            np.block([
                [blocks[0].cov, np.zeros((1, 2)), np.zeros((1, 2))],
                [np.zeros((2, 1)), blocks[1].cov, np.zeros((2, 2))],
                [np.zeros((2, 1)), np.zeros((2, 2)), blocks[2].cov],
            ]),
        ),), projection=proj)
        out = project_marginal(state)
        assert out.mean[0] == pytest.approx(0.5 + 1.0 - 0.2)
        assert out.cov[0, 0] == pytest.approx(0.3 + 0.4 + 0.2)

    def test_projection_is_linear_in_the_mean(self):
        rng = np.random.default_rng(9)
        cov = random_spd(rng, 3)
        mean = rng.standard_normal(3)
        row = rng.standard_normal(3)
        one = project_marginal(single_factor_state(mean, cov, row))
        two = project_marginal(single_factor_state(2 * mean, cov, row))
        assert two.mean[0] == pytest.approx(2 * one.mean[0])
        assert two.cov[0, 0] == pytest.approx(one.cov[0, 0])

    def test_independent_factors_give_diagonal_marginal(self):
        state = JointState(
            blocks=(
                GaussianMoment([1.0], [[1.0]]),
                GaussianMoment([2.0, 0.0], np.eye(2)),
            ),
            projection=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        )
        out = project_marginal(state)
        np.testing.assert_allclose(out.mean, [1.0, 2.0])
        np.testing.assert_allclose(out.cov, np.eye(2))


class TestPsdRepair:
    def test_counter_fires_on_large_negative_eigenvalue(self):
        ga.reset_psd_floor_warnings()
        bad = np.array([[1.0, 0.0], [0.0, -0.5]])
        fixed = ga.repair_psd(bad)
        assert np.linalg.eigvalsh(fixed).min() >= 0.0
        assert ga.psd_floor_warnings() == 1
        ga.reset_psd_floor_warnings()

    def test_counter_quiet_on_tiny_floor(self):
        ga.reset_psd_floor_warnings()
        nearly = np.array([[1.0, 0.0], [0.0, -1e-14]])
        ga.repair_psd(nearly)
        assert ga.psd_floor_warnings() == 0
