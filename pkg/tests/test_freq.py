import numpy as np
import pytest

from clcalib import betabin, copula, freq
from clcalib.betabin import DOR, LOG_DOR, marginal
from clcalib.data import MetaDataset
from clcalib.errors import DegenerateData, SingularSensitivity
from clcalib.posterior import GaussianPrior


def random_spd(rng, p=4, cond=50.0):
    q, _ = np.linalg.qr(rng.normal(size=(p, p)))
    vals = np.exp(rng.uniform(0, np.log(cond), p))
    return (q * vals) @ q.T


def simulated(rng, tau=0.5, n_studies=30, size=80, theta="prime", family="clayton"):
    setting = copula.SimSetting(family, tau, 2, np.full((n_studies, 2), size), theta)
    return copula.simulate_dataset(setting, GaussianPrior.isotropic(4), rng)


def fd_jacobian(f, x, h=1e-6):
    cols = []
    for j in range(len(x)):
        e = np.zeros(len(x))
        e[j] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.column_stack(cols)


class TestMaximize:
    def test_one_group_consistency(self, rng):
        n = np.full((2000, 1), 500)
        p = rng.beta(2, 5, size=(2000, 1))
        data = MetaDataset(n, rng.binomial(n, p))
        fit = freq.fit(data)
        se = np.sqrt(np.diag(fit.V_hat))
        assert np.all(np.abs(fit.theta_hat - np.log([2, 5])) < 3 * se)

    def test_stationarity(self, rng):
        data, _, _ = simulated(rng)
        theta, _ = freq.maximize(data)
        assert np.max(np.abs(freq.total_score(data, theta))) < 1e-6

    def test_doubling_dataset(self, rng):
        data, _, _ = simulated(rng)
        t1, _ = freq.maximize(data)
        t2, _ = freq.maximize(data.concat(data))
        np.testing.assert_allclose(t1, t2, atol=1e-8)

    @pytest.mark.parametrize("events", [[[0, 3], [0, 4]], [[10, 3], [10, 4]]])
    def test_degenerate_group(self, events):
        data = MetaDataset([[10, 10], [10, 10]], events)
        with pytest.raises(DegenerateData):
            freq.maximize(data)

    def test_fit_result_invariants(self, rng):
        data, _, _ = simulated(rng, tau=0.9)
        fit = freq.fit(data)
        assert fit.converged
        assert np.all(np.linalg.eigvalsh(fit.H_hat) > 0)
        np.testing.assert_allclose(fit.N_hat, np.linalg.inv(fit.H_hat), rtol=1e-10)
        assert fit.loglik_at_max == pytest.approx(freq.composite_loglik(data, fit.theta_hat))


class TestSensitivity:
    def test_cross_blocks_zero(self, rng):
        data, _, _ = simulated(rng)
        H = freq.sensitivity(data, rng.normal(size=4))
        assert np.all(H[:2, 2:] == 0) and np.all(H[2:, :2] == 0)

    def test_finite_differences(self, rng):
        data, _, _ = simulated(rng)
        for _ in range(10):
            theta = rng.normal(scale=0.8, size=4)
            fd = -fd_jacobian(lambda t: freq.total_score(data, t), theta)
            H = freq.sensitivity(data, theta)
            assert np.max(np.abs(H - fd) / np.maximum(np.abs(fd), 1.0)) < 1e-5

    def test_additive(self, rng):
        d1, _, _ = simulated(rng, n_studies=10)
        d2, _, _ = simulated(rng, n_studies=7)
        theta = rng.normal(size=4)
        np.testing.assert_allclose(
            freq.sensitivity(d1.concat(d2), theta),
            freq.sensitivity(d1, theta) + freq.sensitivity(d2, theta),
            rtol=1e-12,
        )


class TestVariability:
    def test_single_study_rank_one(self, rng):
        data = MetaDataset([[30, 40]], [[12, 9]])
        J = freq.variability(data, rng.normal(size=4))
        assert np.linalg.matrix_rank(J, tol=1e-10 * np.linalg.norm(J)) <= 1
        u = freq.study_scores(data, [0.1, 0.2, 0.3, 0.4])[0]
        np.testing.assert_allclose(freq.variability(data, [0.1, 0.2, 0.3, 0.4]), np.outer(u, u))

    def test_psd(self, rng):
        for _ in range(20):
            data, _, _ = simulated(rng, n_studies=int(rng.integers(2, 20)))
            J = freq.variability(data, rng.normal(size=4))
            assert np.linalg.eigvalsh(J).min() >= -1e-10 * np.linalg.norm(J)

    def test_bartlett_identity_under_independence(self, rng):
        data, truth, _ = simulated(rng, tau=0.0, n_studies=5000, size=60)
        H = freq.sensitivity(data, truth) / 5000
        J = freq.variability(data, truth) / 5000
        for k in range(2):
            blk = slice(2 * k, 2 * k + 2)
            assert np.linalg.norm(J[blk, blk] - H[blk, blk]) / np.linalg.norm(H[blk, blk]) < 0.1


class TestCovariances:
    def test_sandwich_collapses(self, rng):
        H = random_spd(rng)
        np.testing.assert_allclose(freq.robust_covariance_from(H, H), freq.naive_covariance_from(H), rtol=1e-10)

    def test_scalar_scaling(self, rng):
        H = random_spd(rng)
        np.testing.assert_allclose(freq.robust_covariance_from(H, 2 * H), 2 * freq.naive_covariance_from(H), rtol=1e-10)

    def test_triple_product(self, rng):
        for _ in range(50):
            H, J = random_spd(rng), random_spd(rng)
            Hi = np.linalg.inv(H)
            ref = Hi @ J @ Hi
            V = freq.robust_covariance_from(H, J)
            assert np.linalg.norm(V - ref) / np.linalg.norm(ref) < 1e-10

    def test_symmetric_and_psd(self, rng):
        data, _, _ = simulated(rng, tau=0.9)
        fit = freq.fit(data)
        V = freq.robust_covariance(fit)
        assert np.array_equal(V, V.T)
        assert np.linalg.eigvalsh(V).min() >= -1e-10 * np.trace(V)
        N = freq.naive_covariance(fit)
        assert np.all(N[:2, 2:] == 0)

    def test_singular(self):
        H = np.diag([1.0, 1.0, 1.0, 1e-14])
        with pytest.raises(SingularSensitivity):
            freq.naive_covariance_from(H)


class TestDeltaVariance:
    def test_identity(self):
        assert freq.delta_variance(np.eye(4), marginal(2), np.zeros(4)) == 1.0

    def test_marginal_picks_diagonal(self, rng):
        cov = random_spd(rng)
        for j in range(4):
            assert freq.delta_variance(cov, marginal(j), rng.normal(size=4)) == pytest.approx(cov[j, j], rel=1e-14)

    def test_log_scale(self, rng):
        cov = random_spd(rng)
        theta = rng.normal(size=4)
        rho = betabin.dor(theta)
        assert freq.delta_variance(cov, LOG_DOR, theta) == pytest.approx(freq.delta_variance(cov, DOR, theta) / rho**2)


@pytest.mark.slow
def test_wald_coverage_at_high_correlation():
    """Robust Wald intervals for log DOR hold 95% coverage; naive ones undercover."""
    sizes = copula.default_sizes(15, 20240601)
    setting = copula.SimSetting("clayton", 0.9, 2, sizes, "prime")
    family = setting.copula()
    prior = GaussianPrior.isotropic(4, 1e4)
    robust, naive = [], []
    for rep in range(500):
        data, truth, _ = copula.simulate_dataset(setting, prior, np.random.default_rng([31, rep]), family)
        fit = freq.fit(data)
        g = LOG_DOR.gradient(fit.theta_hat)
        err = abs(LOG_DOR.value(fit.theta_hat) - LOG_DOR.value(truth))
        robust.append(err < 1.959964 * np.sqrt(g @ fit.V_hat @ g))
        naive.append(err < 1.959964 * np.sqrt(g @ fit.N_hat @ g))
    cov_robust, cov_naive = np.mean(robust), np.mean(naive)
    print(f"robust coverage {cov_robust:.3f}, naive coverage {cov_naive:.3f}")
    assert abs(cov_robust - 0.95) <= 0.03
    assert cov_naive <= 0.95 - 0.05
