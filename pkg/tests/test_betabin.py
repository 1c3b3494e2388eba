import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from clcalib import betabin, freq
from clcalib.betabin import DOR, LOG_DOR, RISK_DIFF, THETA_DOUBLE_PRIME, THETA_PRIME, marginal
from clcalib.data import MetaDataset
from clcalib.errors import DomainError

# log P(Y=3) for Beta-Binomial(10, 2, 5), from quad of Binomial(10, p) * Beta(2, 5) pdf
QUAD_LOG_PMF_3_10_2_5 = -1.8028093054146401


def quad_pmf(y, n, a, b):
    val, _ = integrate.quad(
        lambda p: stats.binom.pmf(y, n, p) * stats.beta.pdf(p, a, b), 0, 1, epsabs=1e-14, epsrel=1e-12, limit=200
    )
    return val


def central_diff(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    out = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        out.append((f(x + e) - f(x - e)) / (2 * h))
    return np.array(out)


def random_cells(rng, count, n_max=50):
    n = rng.integers(0, n_max + 1, count)
    y = np.array([rng.integers(0, k + 1) for k in n])
    la = np.log(rng.uniform(0.05, 50, count))
    lb = np.log(rng.uniform(0.05, 50, count))
    return y, n, la, lb


class TestLogPmf:
    def test_uniform_case(self):
        assert betabin.log_pmf(1, 1, 0.0, 0.0) == pytest.approx(np.log(0.5), abs=1e-15)

    def test_empty_trial(self):
        assert betabin.log_pmf(0, 0, 0.7, -1.3) == 0.0

    def test_matches_quadrature(self):
        got = betabin.log_pmf(3, 10, np.log(2), np.log(5))
        assert got == pytest.approx(QUAD_LOG_PMF_3_10_2_5, abs=1e-8)
        assert np.exp(got) == pytest.approx(quad_pmf(3, 10, 2, 5), abs=1e-8)

    @pytest.mark.parametrize("y,n", [(-1, 3), (4, 3)])
    def test_domain(self, y, n):
        with pytest.raises(DomainError):
            betabin.log_pmf(y, n, 0.0, 0.0)

    def test_no_overflow_large_n(self):
        val = betabin.log_pmf(2500, 5000, np.log(3.0), np.log(2.0))
        assert np.isfinite(val)

    def test_normalization_random(self, rng):
        for _ in range(200):
            n = int(rng.integers(0, 51))
            a, b = rng.uniform(0.05, 50, 2)
            total = np.exp(betabin.log_pmf(np.arange(n + 1), n, np.log(a), np.log(b))).sum()
            assert abs(total - 1) < 1e-10

    @settings(max_examples=100, deadline=None)
    @given(
        n=st.integers(0, 50),
        a=st.floats(0.05, 50),
        b=st.floats(0.05, 50),
    )
    def test_normalization_property(self, n, a, b):
        total = np.exp(betabin.log_pmf(np.arange(n + 1), n, np.log(a), np.log(b))).sum()
        assert abs(total - 1) < 1e-10


class TestScore:
    def test_digamma_case(self):
        np.testing.assert_allclose(betabin.score_ik(1, 1, 0.0, 0.0), [0.5, -0.5], atol=1e-14)

    def test_empty_trial(self):
        np.testing.assert_array_equal(betabin.score_ik(0, 0, 0.3, 0.4), [0.0, 0.0])

    def test_finite_differences(self, rng):
        y, n, la, lb = random_cells(rng, 300)
        for yi, ni, a, b in zip(y, n, la, lb):
            fd = central_diff(lambda t: betabin.log_pmf(yi, ni, t[0], t[1]), [a, b])
            an = betabin.score_ik(yi, ni, a, b)
            assert np.all(np.abs(an - fd) <= 1e-6 * np.maximum(np.abs(fd), 1.0))

    @pytest.mark.parametrize("n", [1, 5, 12, 20])
    def test_expectation_zero(self, rng, n):
        for _ in range(20):
            a, b = np.log(rng.uniform(0.05, 50, 2))
            ys = np.arange(n + 1)
            p = np.exp(betabin.log_pmf(ys, n, a, b))
            s = betabin.score_ik(ys, n, a, b)
            np.testing.assert_allclose(p @ s, 0.0, atol=1e-8)

    def test_hessian_finite_differences(self, rng):
        y, n, la, lb = random_cells(rng, 200)
        for yi, ni, a, b in zip(y, n, la, lb):
            fd = central_diff(lambda t: betabin.score_ik(yi, ni, t[0], t[1]), [a, b])
            an = betabin.hessian_ik(yi, ni, a, b)
            assert np.all(np.abs(an - fd) <= 1e-5 * np.maximum(np.abs(fd), 1.0))


class TestCompositeLoglik:
    def test_single_term(self):
        data = MetaDataset([[1]], [[1]])
        assert freq.composite_loglik(data, [0.0, 0.0]) == pytest.approx(np.log(0.5), abs=1e-15)

    def test_additivity(self):
        one = MetaDataset([[10, 12]], [[3, 7]])
        two = one.concat(one)
        theta = [0.2, -0.1, 0.5, 0.3]
        assert freq.composite_loglik(two, theta) == 2 * freq.composite_loglik(one, theta)

    def test_matches_quadrature(self):
        data = MetaDataset([[10, 8], [6, 9], [12, 5]], [[3, 2], [0, 9], [7, 1]])
        theta = np.log([2.0, 5.0, 1.5, 0.7])
        expected = 0.0
        for n_row, y_row in zip(data.sizes, data.events):
            for k in range(2):
                expected += np.log(quad_pmf(y_row[k], n_row[k], *np.exp(theta[2 * k : 2 * k + 2])))
        assert freq.composite_loglik(data, theta) == pytest.approx(expected, abs=1e-7)


class TestEffectMeasures:
    def test_symmetric_configuration(self):
        assert betabin.pi_k(THETA_DOUBLE_PRIME, 0) == 0.5
        assert betabin.pi_k(THETA_DOUBLE_PRIME, 1) == 0.5
        assert betabin.risk_diff(THETA_DOUBLE_PRIME) == 0.0
        assert betabin.dor(THETA_DOUBLE_PRIME) == 1.0

    def test_theta_prime(self):
        assert betabin.pi_k(THETA_PRIME, 0) == pytest.approx(3.11 / 6.02, rel=1e-12)
        assert betabin.pi_k(THETA_PRIME, 0) == pytest.approx(0.51661, abs=5e-6)
        assert betabin.dor(THETA_PRIME) == pytest.approx(0.91140, abs=5e-6)
        assert betabin.odds_k(THETA_PRIME, 1) == pytest.approx(3.94 / 3.36, rel=1e-12)

    def test_label_swap(self, rng):
        for _ in range(20):
            a1, b1 = rng.normal(size=2)
            theta = np.array([a1, b1, b1, a1])
            swapped = theta[[2, 3, 0, 1]]
            assert betabin.dor(theta) * betabin.dor(swapped) == pytest.approx(1.0, rel=1e-14)

    def test_pi_range(self, rng):
        theta = rng.normal(scale=3, size=(100, 4))
        p = betabin.pi_k(theta, 0)
        assert np.all((p > 0) & (p < 1))

    def test_dor_gradient_direction_at_symmetric_point(self):
        g = DOR.gradient(THETA_DOUBLE_PRIME)
        d = np.array([1, -1, -1, 1.0])
        assert abs(g @ d) / (np.linalg.norm(g) * np.linalg.norm(d)) == pytest.approx(1.0, abs=1e-14)

    def test_logdor_gradient_is_scaled_dor_gradient(self, rng):
        for theta in rng.normal(size=(20, 4)):
            np.testing.assert_allclose(LOG_DOR.gradient(theta), DOR.gradient(theta) / betabin.dor(theta), rtol=1e-13)

    @pytest.mark.parametrize("measure", [DOR, LOG_DOR, RISK_DIFF, marginal(0), marginal(3)], ids=lambda m: m.label)
    def test_gradient_finite_differences(self, rng, measure):
        for theta in rng.normal(scale=1.5, size=(100, 4)):
            fd = central_diff(measure.value, theta)
            an = measure.gradient(theta)
            assert np.all(np.abs(an - fd) <= 1e-6 * np.maximum(np.abs(fd), 1.0))

    def test_dor_equals_exp_logdor(self, rng):
        theta = rng.normal(scale=2, size=(500, 4))
        np.testing.assert_allclose(DOR.value(theta), np.exp(LOG_DOR.value(theta)), rtol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(
        logit=st.floats(-4, 4),
        s1=st.floats(-3, 3),
        s2=st.floats(-3, 3),
    )
    def test_gradients_proportional_when_pi_equal(self, logit, s1, s2):
        # equal average probabilities, different precisions a + b
        theta = np.array([s1 + logit / 2, s1 - logit / 2, s2 + logit / 2, s2 - logit / 2])
        g_d = RISK_DIFF.gradient(theta)
        g_r = LOG_DOR.gradient(theta)
        cos = g_d @ g_r / (np.linalg.norm(g_d) * np.linalg.norm(g_r))
        assert abs(abs(cos) - 1) < 1e-8

    def test_parse(self):
        assert betabin.EffectMeasure.parse("DOR") == DOR
        assert betabin.EffectMeasure.parse("theta2") == marginal(2)
        with pytest.raises(ValueError):
            betabin.EffectMeasure.parse("nope")
