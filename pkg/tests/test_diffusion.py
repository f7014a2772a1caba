import numpy as np
import pytest

from rotstruct.diffusion import (
    NoiseSchedule,
    PerSampleNoise,
    TOutOfRange,
    UnknownKind,
    corrupt,
    make_schedule,
    posterior_from_alphas,
    posterior_params,
    sample,
    training_loss,
    x_hat_from_eps,
)
from rotstruct.subspace import (
    MassWeights,
    project_zero_com,
    sample_projected_gaussian,
    weighted_com_rows,
)


@pytest.fixture(scope="module")
def sched():
    return make_schedule(1000)


@pytest.fixture
def weights():
    return MassWeights.from_masses([12.0, 16.0, 14.0, 1.0])


class TestSchedule:
    def test_invariants(self, sched):
        assert sched.alpha[0] >= 1 - 1e-4
        assert sched.alpha[-1] <= 1e-2
        assert np.all(np.diff(sched.alpha) < 0)
        assert np.abs(sched.alpha**2 + sched.sigma**2 - 1).max() < 1e-12

    def test_midpoint_formula(self, sched):
        s = 1e-5
        expected = (1 - 0.5**2) ** 2 * (1 - 2 * s) + s
        assert np.isclose(sched.alpha[500] ** 2, expected, rtol=1e-12)

    def test_unknown_kind(self):
        with pytest.raises(UnknownKind):
            make_schedule(10, "linear-beta")

    def test_direct_construction_validated(self):
        alpha = np.linspace(1.0 - 1e-5, 5e-3, 11)
        sigma = np.sqrt(1 - alpha**2)
        NoiseSchedule(t_max=10, alpha=alpha, sigma=sigma)
        with pytest.raises(ValueError):
            NoiseSchedule(t_max=10, alpha=alpha[::-1].copy(), sigma=sigma)


class TestCorrupt:
    def test_t0_stays_close(self, sched, weights):
        rng = np.random.default_rng(0)
        x = sample_projected_gaussian(4, weights, rng)
        z, _ = corrupt(x, 0, sched, weights, rng)
        assert np.abs(z - x).max() < 5 * sched.sigma[0] + 1e-5

    def test_zero_input(self, sched, weights):
        rng = np.random.default_rng(1)
        z, eps = corrupt(np.zeros((4, 3)), 500, sched, weights, rng)
        assert np.array_equal(z, sched.sigma[500] * eps)

    def test_stays_in_subspace(self, sched, weights):
        rng = np.random.default_rng(2)
        x = sample_projected_gaussian(4, weights, rng)
        for _ in range(1000):
            t = int(rng.integers(0, 1001))
            z, _ = corrupt(x, t, sched, weights, rng)
            assert np.abs(weighted_com_rows(z, weights)).max() < 1e-10

    def test_t_out_of_range(self, sched, weights):
        with pytest.raises(TOutOfRange):
            corrupt(np.zeros((4, 3)), 1001, sched, weights, np.random.default_rng(0))


class TestXHat:
    def test_exact_inversion(self, sched, weights):
        rng = np.random.default_rng(3)
        x = sample_projected_gaussian(4, weights, rng)
        for t in (0, 250, 997):
            z, eps = corrupt(x, t, sched, weights, rng)
            rec = x_hat_from_eps(z, eps, t, sched)
            assert np.allclose(rec, x, rtol=1e-10, atol=1e-10)

    def test_zero_eps_hat(self, sched):
        z = np.ones((2, 3))
        assert np.allclose(x_hat_from_eps(z, np.zeros_like(z), 700, sched),
                           z / sched.alpha[700])

    def test_linearity_in_eps_hat(self, sched):
        rng = np.random.default_rng(4)
        z = rng.standard_normal((3, 3))
        e1 = rng.standard_normal((3, 3))
        e2 = rng.standard_normal((3, 3))
        a, b = 0.3, 1.7
        mix = x_hat_from_eps(z, a * e1 + b * e2, 400, sched)
        parts = (
            a * x_hat_from_eps(z, e1, 400, sched)
            + b * x_hat_from_eps(z, e2, 400, sched)
            - (a + b - 1) * x_hat_from_eps(z, np.zeros_like(z), 400, sched)
        )
        assert np.allclose(mix, parts, rtol=1e-12)


class TestPosterior:
    def test_hand_worked_pair(self):
        coeff_z, coeff_x, variance = posterior_from_alphas(0.9, 0.81)
        assert np.isclose(coeff_z, 0.9 * 0.19 / 0.3439, rtol=1e-12)
        assert np.isclose(coeff_z, 0.49724, atol=5e-6)
        assert np.isclose(coeff_x, 0.49724, atol=5e-6)
        assert np.isclose(variance, 0.10497, atol=5e-6)

    def test_against_gaussian_bayes_oracle(self):
        # posterior of z_{t-1} ~ N(a_p x, s_p^2) given z_t ~ N(step z_{t-1}, step_var)
        rng = np.random.default_rng(5)
        for _ in range(50):
            a_p = rng.uniform(0.2, 0.999)
            a_t = a_p * rng.uniform(0.5, 0.999)
            s2_p, s2_t = 1 - a_p**2, 1 - a_t**2
            step = a_t / a_p
            step_var = s2_t - step**2 * s2_p
            prec = 1.0 / s2_p + step**2 / step_var
            x, z_t = rng.standard_normal(2)
            mean_oracle = (a_p * x / s2_p + step * z_t / step_var) / prec
            coeff_z, coeff_x, variance = posterior_from_alphas(a_p, a_t)
            assert np.isclose(coeff_z * z_t + coeff_x * x, mean_oracle, rtol=1e-9)
            assert np.isclose(variance, 1.0 / prec, rtol=1e-9)

    def test_markov_mean_consistency(self, sched):
        rng = np.random.default_rng(6)
        x = 0.73
        for t in rng.integers(1, 1001, size=100):
            coeff_z, coeff_x, _ = posterior_params(int(t), sched)
            mean = coeff_z * (sched.alpha[t] * x) + coeff_x * x
            assert np.isclose(mean, sched.alpha[t - 1] * x, rtol=1e-9)

    def test_variance_positive(self, sched):
        for t in range(1, 1001):
            assert posterior_params(t, sched)[2] > 0


class TestSample:
    def test_dirac_optimal_denoiser_recovers_target(self, sched, weights):
        rng = np.random.default_rng(7)
        x_star = sample_projected_gaussian(4, weights, rng)

        def denoise(z, cond, t):
            return (z - sched.alpha[t] * x_star) / sched.sigma[t]

        out = sample(denoise, None, weights, sched, np.random.default_rng(8))
        floor = 3.0 * sched.sigma[0] / sched.alpha[0]
        assert np.abs(out - x_star).max() < floor

    def test_zero_denoiser_symmetry(self, sched, weights):
        def denoise(z, cond, t):
            return np.zeros_like(z)

        class NegatedNoise:
            def __init__(self, seed):
                self.rng = np.random.default_rng(seed)

            def standard_normal(self, shape):
                return -self.rng.standard_normal(shape)

        a = sample(denoise, None, weights, sched, np.random.default_rng(9))
        b = sample(denoise, None, weights, sched, NegatedNoise(9))
        assert np.array_equal(a, -b)

    def test_deterministic(self, sched, weights):
        def denoise(z, cond, t):
            return 0.5 * z

        a = sample(denoise, None, weights, sched, np.random.default_rng(10))
        b = sample(denoise, None, weights, sched, np.random.default_rng(10))
        assert np.array_equal(a, b)

    def test_trajectory_stays_in_subspace(self, weights):
        sched_short = make_schedule(60)
        seen = []

        def denoise(z, cond, t):
            seen.append(np.abs(weighted_com_rows(z, weights)).max())
            return project_zero_com(0.1 * z, weights)

        sample(denoise, None, weights, sched_short, np.random.default_rng(11))
        assert max(seen) < 1e-9

    def test_per_sample_noise_matches_sequential(self, weights):
        sched_short = make_schedule(40)

        def denoise(z, cond, t):
            return project_zero_com(0.3 * z, weights)

        children = [np.random.default_rng([42, i]) for i in range(3)]
        batch = sample(denoise, None, weights, sched_short,
                       PerSampleNoise(children), n_samples=3)
        for i in range(3):
            single = sample(denoise, None, weights, sched_short,
                            np.random.default_rng([42, i]))
            assert np.array_equal(batch[i], single)


class TestTrainingLoss:
    def test_perfect_denoiser_zero_loss(self, sched, weights):
        rng = np.random.default_rng(12)
        x = sample_projected_gaussian(4, weights, rng)
        store = {}

        def peek(z, cond, t):
            return store["eps"]

        draw_rng = np.random.default_rng(13)
        t = int(draw_rng.integers(0, 1001))
        eps = sample_projected_gaussian(4, weights, draw_rng)
        store["eps"] = eps
        loss = training_loss(peek, x, None, weights, sched,
                             np.random.default_rng(0), t=t, eps=eps)
        assert loss == 0.0

    def test_zero_denoiser_expected_loss(self, sched, weights):
        rng = np.random.default_rng(14)
        x = sample_projected_gaussian(4, weights, rng)

        def zero(z, cond, t):
            return np.zeros_like(z)

        losses = [
            training_loss(zero, x, None, weights, sched, rng) for _ in range(5000)
        ]
        expected = 3.0 * (4 - 1)  # dimension of the subspace
        assert abs(np.mean(losses) - expected) / expected < 0.02

    def test_permutation_invariance(self, sched, weights):
        rng = np.random.default_rng(15)
        x = sample_projected_gaussian(4, weights, rng)
        eps = sample_projected_gaussian(4, weights, rng)
        perm = np.array([2, 0, 3, 1])
        w_perm = MassWeights.from_masses(weights.normalized_masses[perm])

        def denoise(z, cond, t):
            return 0.25 * z

        l1 = training_loss(denoise, x, None, weights, sched,
                           np.random.default_rng(0), t=77, eps=eps)
        l2 = training_loss(denoise, x[perm], None, w_perm, sched,
                           np.random.default_rng(0), t=77, eps=eps[perm])
        assert np.isclose(l1, l2, rtol=1e-12)


def test_sampler_reflection_equivariance_with_network():
    # an equivariant denoiser plus reflected noise reflects the sample exactly
    from rotstruct import denoiser as dn

    rng = np.random.default_rng(16)
    cfg = dn.ModelConfig(hidden_dim=32, message_dim=48, cond_mlp_dim=24,
                         time_embed_dim=16, atom_embed_dim=8, n_blocks=2,
                         n_heads=2, head_dim=16)
    params = dn.init_params(cfg, rng)
    params = {k: v + 0.05 * rng.standard_normal(v.shape) for k, v in params.items()}
    weights = MassWeights.from_masses([12.0, 16.0, 14.0])
    cond = rng.uniform(size=(3, 11))
    cond[:, 0] = 0.6  # scaled carbon atomic number
    sched_short = make_schedule(30)

    def denoise(z, c, t):
        return dn.denoise_eps(params, z, c, t, cfg, weights, t_max=30)

    refl = np.array([-1.0, 1.0, -1.0])

    class ReflectedNoise:
        def __init__(self, seed):
            self.rng = np.random.default_rng(seed)

        def standard_normal(self, shape):
            return self.rng.standard_normal(shape) * refl

    base = sample(denoise, cond, weights, sched_short, np.random.default_rng(17))
    mirrored = sample(denoise, cond, weights, sched_short, ReflectedNoise(17))
    assert np.array_equal(mirrored, base * refl)
