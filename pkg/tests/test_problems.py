import numpy as np
import pytest

from sgmlab.geometry import Ball, Box
from sgmlab.problems import (BoundedRademacher, DegenerateProblemError,
                             ErmLeastSquares, Gaussian, Minibatch, QuadPlusL1,
                             Quadratic, constants, load_erm_csv,
                             noisy_gradient, subgradient, value)

BALL2 = Ball(center=[0.0, 0.0], radius=2.0)
BALL1D = Ball(center=[0.0], radius=5.0)
NO_NOISE = Gaussian(sigma2=0.0)


def quad2(diag=(1.0, 1.0), star=(0.0, 0.0), noise=NO_NOISE, domain=BALL2):
    return Quadratic(hessian_diag=diag, theta_star=star, domain=domain,
                     noise=noise)


class TestValueExamples:
    def test_quadratic(self):
        p = Quadratic(hessian_diag=[1.0, 1.0], theta_star=[0.0, 0.0],
                      domain=BALL2, noise=NO_NOISE)
        assert value(p, [1.0, 0.0]) == 0.5

    def test_quad_plus_l1(self):
        p = QuadPlusL1(hessian_diag=[1.0], theta_star=[0.0], l1_weight=2.0,
                       domain=BALL1D, noise=NO_NOISE)
        assert value(p, [3.0]) == 10.5

    def test_erm_identity(self):
        # two stacked identity blocks: f(theta) = ||theta||^2 / 4
        p = ErmLeastSquares(design=np.vstack([np.eye(2), np.eye(2)]),
                            targets=[0.0, 0.0, 0.0, 0.0],
                            domain=BALL2, noise=NO_NOISE)
        assert value(p, [1.0, 1.0]) == 0.5

    def test_out_of_domain_rejected(self):
        p = quad2()
        with pytest.raises(ValueError, match="outside"):
            value(p, [3.0, 0.0])


class TestSubgradientExamples:
    def test_quadratic(self):
        p = quad2(diag=(2.0, 3.0))
        np.testing.assert_array_equal(subgradient(p, [1.0, 1.0]), [2.0, 3.0])

    def test_l1_kink_tie_break(self):
        p = QuadPlusL1(hessian_diag=[1.0], theta_star=[0.0], l1_weight=2.0,
                       domain=BALL1D, noise=NO_NOISE)
        np.testing.assert_array_equal(subgradient(p, [0.0]), [0.0])

    def test_l1_sign_rule(self):
        p = QuadPlusL1(hessian_diag=[1.0], theta_star=[0.0], l1_weight=2.0,
                       domain=BALL1D, noise=NO_NOISE)
        np.testing.assert_array_equal(subgradient(p, [-1.0]), [-3.0])


class TestConstantsExamples:
    def test_quadratic_closed_forms(self):
        p = Quadratic(hessian_diag=[1.0, 4.0], theta_star=[0.0, 0.0],
                      domain=Ball(center=[0.0, 0.0], radius=1.0),
                      noise=NO_NOISE)
        c = constants(p)
        assert c.m == 1.0
        assert c.sqrt_M == 4.0
        assert c.L == 2.0

    def test_erm_identity_design(self):
        # gram matrix I/2, so the strong convexity constant is 1/2
        p = ErmLeastSquares(design=np.vstack([np.eye(2), np.eye(2)]),
                            targets=[0.0, 0.0, 0.0, 0.0],
                            domain=BALL2, noise=NO_NOISE)
        assert constants(p).m == pytest.approx(0.5, rel=1e-12)

    def test_rank_deficient_rejected(self):
        with pytest.raises(DegenerateProblemError):
            ErmLeastSquares(design=[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]],
                            targets=[0.0, 0.0, 0.0], domain=BALL2,
                            noise=NO_NOISE)


class TestNoisyGradient:
    def test_zero_noise_equals_subgradient(self):
        p = quad2()
        rng = np.random.default_rng(0)
        theta = [0.3, -0.7]
        np.testing.assert_array_equal(noisy_gradient(p, theta, rng),
                                      subgradient(p, theta))

    def test_gaussian_mean_monte_carlo(self):
        # MC mean of g at theta=1 vs the 4 sigma / sqrt(n) confidence band
        p = Quadratic(hessian_diag=[1.0], theta_star=[0.0], domain=BALL1D,
                      noise=Gaussian(sigma2=1.0))
        rng = np.random.default_rng(123)
        n = 1_000_000
        draws = p.subgradient([1.0]) + p.noise.sample(rng, n, 1)
        assert abs(draws.mean() - 1.0) < 4e-3

    def test_rademacher_support(self):
        p = Quadratic(hessian_diag=[1.0], theta_star=[0.0], domain=BALL1D,
                      noise=BoundedRademacher(sigma2=4.0))
        rng = np.random.default_rng(5)
        s = float(subgradient(p, [1.0])[0])
        for _ in range(200):
            g = float(noisy_gradient(p, [1.0], rng)[0])
            assert g in (s - 2.0, s + 2.0)


class TestConstruction:
    def test_theta_star_must_be_interior(self):
        with pytest.raises(ValueError, match="interior|inside"):
            Quadratic(hessian_diag=[1.0, 1.0], theta_star=[2.0, 0.0],
                      domain=BALL2, noise=NO_NOISE)

    def test_interior_margin_enforced(self):
        with pytest.raises(ValueError):
            Quadratic(hessian_diag=[1.0], theta_star=[5.0 - 1e-12],
                      domain=BALL1D, noise=NO_NOISE)

    def test_nonpositive_hessian_rejected(self):
        with pytest.raises(DegenerateProblemError):
            quad2(diag=(1.0, 0.0))


class TestLoadErmCsv:
    def test_exact_fit_1d(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("1,2\n2,4\n")
        p = load_erm_csv(f, BALL1D, NO_NOISE)
        np.testing.assert_allclose(p.theta_star, [2.0], atol=1e-12)

    def test_non_numeric_cell_position(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("1,2\nx,4\n")
        with pytest.raises(ValueError, match="row 2, column 1"):
            load_erm_csv(f, BALL1D, NO_NOISE)

    def test_theta_star_outside_domain(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("1,0,10\n0,1,10\n1,1,20\n")
        with pytest.raises(ValueError, match="outside"):
            load_erm_csv(f, Ball(center=[0.0, 0.0], radius=1.0), NO_NOISE)


class TestMinibatch:
    def test_minibatch_gradient_is_unbiased(self):
        rng_data = np.random.default_rng(2)
        X = rng_data.normal(size=(40, 2))
        y = rng_data.normal(size=40)
        p = ErmLeastSquares(design=X, targets=y,
                            domain=Ball(center=np.linalg.lstsq(X, y, rcond=None)[0],
                                        radius=3.0),
                            noise=Minibatch(batch_size=4))
        theta = p.theta_star + np.array([0.5, -0.25])
        rng = np.random.default_rng(77)
        draws = np.stack([noisy_gradient(p, theta, rng) for _ in range(40_000)])
        np.testing.assert_allclose(draws.mean(axis=0), subgradient(p, theta),
                                   atol=0.02)

    def test_minibatch_sigma2_covers_variance(self):
        rng_data = np.random.default_rng(3)
        X = rng_data.normal(size=(30, 2))
        y = rng_data.normal(size=30)
        p = ErmLeastSquares(design=X, targets=y,
                            domain=Ball(center=np.linalg.lstsq(X, y, rcond=None)[0],
                                        radius=2.0),
                            noise=Minibatch(batch_size=2))
        c = p.constants()
        theta = p.theta_star
        rng = np.random.default_rng(8)
        draws = np.stack([noisy_gradient(p, theta, rng) for _ in range(20_000)])
        emp_var = float(np.mean(np.sum((draws - subgradient(p, theta)) ** 2,
                                       axis=1)))
        assert emp_var <= c.sigma2


# Assumption verifier suites (also exercised by the acceptance module).

def _random_interior(domain, rng, n):
    from sgmlab.geometry import project
    pts = project(domain, rng.normal(scale=domain.diameter(),
                                     size=(n, domain.dimension)))
    # pull strictly inside so finite differences stay in the domain
    if isinstance(domain, Ball):
        return domain.center + 0.99 * (pts - domain.center)
    mid = 0.5 * (domain.lower + domain.upper)
    return mid + 0.99 * (pts - mid)


SMOOTH_PROBLEMS = [
    quad2(diag=(1.0, 3.0), star=(0.1, -0.2)),
    ErmLeastSquares(design=np.array([[1.0, 0.2], [0.3, 1.5], [0.7, -0.4],
                                     [1.1, 0.9]]),
                    targets=[0.1, -0.2, 0.3, 0.0],
                    domain=BALL2, noise=NO_NOISE),
]

ALL_PROBLEMS = SMOOTH_PROBLEMS + [
    QuadPlusL1(hessian_diag=[1.0, 2.0], theta_star=[0.1, -0.3], l1_weight=0.5,
               domain=Box(lower=[-1.0, -1.0], upper=[1.0, 1.0]),
               noise=NO_NOISE),
]


@pytest.mark.parametrize("p", SMOOTH_PROBLEMS)
def test_gradient_vs_central_differences(p):
    rng = np.random.default_rng(31)
    pts = _random_interior(p.domain, rng, 100)
    h = 1e-6
    for theta in pts:
        grad = subgradient(p, theta)
        fd = np.empty_like(grad)
        for k in range(len(theta)):
            e = np.zeros_like(theta)
            e[k] = h
            fd[k] = (value(p, theta + e) - value(p, theta - e)) / (2 * h)
        denom = max(np.linalg.norm(grad), 1.0)
        assert np.linalg.norm(fd - grad) / denom <= 1e-6


@pytest.mark.parametrize("p", ALL_PROBLEMS)
def test_strong_convexity_inequality(p):
    rng = np.random.default_rng(37)
    m = constants(p).m
    a = _random_interior(p.domain, rng, 10_000)
    b = _random_interior(p.domain, rng, 10_000)
    fa = _values(p, a)
    fb = _values(p, b)
    gb = _subgradients(p, b)
    gap = fa - (fb + np.sum(gb * (a - b), axis=1)
                + 0.5 * m * np.sum((a - b) ** 2, axis=1))
    assert np.min(gap) >= -1e-9


@pytest.mark.parametrize("p", ALL_PROBLEMS)
def test_optimality_gap_inequality(p):
    rng = np.random.default_rng(41)
    c = constants(p)
    pts = _random_interior(p.domain, rng, 10_000)
    g = _subgradients(p, pts)
    delta = pts - c.theta_star
    lhs = np.sum(g * delta, axis=1)
    rhs = 0.5 * c.m * np.sum(delta * delta, axis=1)
    assert np.min(lhs - rhs) >= -1e-9


@pytest.mark.parametrize("p", ALL_PROBLEMS)
def test_subgradient_norm_bound(p):
    rng = np.random.default_rng(43)
    c = constants(p)
    pts = _random_interior(p.domain, rng, 10_000)
    norms = np.linalg.norm(_subgradients(p, pts), axis=1)
    assert np.max(norms) <= c.sqrt_M * (1 + 1e-12)


@pytest.mark.parametrize("noise", [Gaussian(sigma2=2.5),
                                   BoundedRademacher(sigma2=2.5)])
def test_noise_moments(noise):
    rng = np.random.default_rng(47)
    d = 3
    draws = noise.sample(rng, 1_000_000, d)
    per_coord_sigma = np.sqrt(noise.sigma2 / d)
    assert np.all(np.abs(draws.mean(axis=0)) < 4 * per_coord_sigma / 1000.0)
    second_moment = float(np.mean(np.sum(draws * draws, axis=1)))
    assert abs(second_moment - noise.sigma2) / noise.sigma2 < 0.01


def _values(p, pts):
    from sgmlab.problems import Quadratic as Q, QuadPlusL1 as QL1
    if isinstance(p, Q):
        delta = pts - p.theta_star
        return 0.5 * np.sum(p.hessian_diag * delta * delta, axis=1)
    if isinstance(p, QL1):
        delta = pts - p.theta_star
        return (0.5 * np.sum(p.hessian_diag * delta * delta, axis=1)
                + p.l1_weight * np.sum(np.abs(delta), axis=1))
    resid = pts @ p.design.T - p.targets
    return 0.5 * np.mean(resid * resid, axis=1)


def _subgradients(p, pts):
    from sgmlab.problems import subgradient_batch
    return subgradient_batch(p, pts)
