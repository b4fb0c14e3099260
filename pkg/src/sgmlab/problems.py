"""Strongly convex objectives with exactly known constants and stochastic
first-order oracles.

Every problem carries a domain and knows its own constants (m, M, sigma^2, L,
theta_star) in closed form, so bound evaluation never has to estimate them.
Gradient oracles return ``s + n`` where ``s`` is a deterministic subgradient
and ``n`` is zero-mean noise with exactly known second moment.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .geometry import Domain, contains

DOMAIN_TOL = 1e-9
INTERIOR_MARGIN = 1e-9


class DegenerateProblemError(ValueError):
    """Raised when a problem violates strong convexity (m too small)."""


@dataclass(frozen=True)
class Gaussian:
    """Spherical Gaussian noise with total second moment E||n||^2 = sigma2."""

    sigma2: float

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")

    def sample(self, rng: np.random.Generator, n_draws: int, dim: int) -> np.ndarray:
        scale = np.sqrt(self.sigma2 / dim)
        return scale * rng.standard_normal((n_draws, dim))


@dataclass(frozen=True)
class BoundedRademacher:
    """Each coordinate is +-sigma/sqrt(d) with equal probability."""

    sigma2: float

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")

    def sample(self, rng: np.random.Generator, n_draws: int, dim: int) -> np.ndarray:
        magnitude = np.sqrt(self.sigma2 / dim)
        signs = np.where(rng.random((n_draws, dim)) < 0.5, -1.0, 1.0)
        return magnitude * signs


NoiseModel = Gaussian | BoundedRademacher


@dataclass(frozen=True)
class Minibatch:
    """ERM noise mode: draw `batch_size` indices uniformly with replacement."""

    batch_size: int

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass(frozen=True)
class ProblemConstants:
    m: float
    M: float
    sigma2: float
    L: float
    theta_star: np.ndarray

    @property
    def sqrt_M(self) -> float:
        return float(np.sqrt(self.M))


def _check_in_domain(domain: Domain, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if not np.all(contains(domain, theta, DOMAIN_TOL)):
        raise ValueError("point lies outside the domain (tolerance 1e-9)")
    return theta


def _check_interior(domain: Domain, theta_star: np.ndarray):
    boundary_margin = _interior_margin(domain, theta_star)
    if boundary_margin < INTERIOR_MARGIN:
        raise ValueError(
            "theta_star must lie strictly inside the domain "
            f"(margin {boundary_margin:.3e} < {INTERIOR_MARGIN:.0e})"
        )


def _interior_margin(domain: Domain, point: np.ndarray) -> float:
    from .geometry import Ball, Box

    if isinstance(domain, Ball):
        return domain.radius - float(np.linalg.norm(point - domain.center))
    assert isinstance(domain, Box)
    return float(np.min(np.minimum(point - domain.lower, domain.upper - point)))


@dataclass(frozen=True)
class Quadratic:
    """f(theta) = 1/2 (theta - theta*)^T diag(h) (theta - theta*)."""

    hessian_diag: np.ndarray
    theta_star: np.ndarray
    domain: Domain
    noise: NoiseModel

    def __post_init__(self):
        object.__setattr__(self, "hessian_diag",
                           np.asarray(self.hessian_diag, dtype=float))
        object.__setattr__(self, "theta_star",
                           np.asarray(self.theta_star, dtype=float))
        if self.hessian_diag.shape != self.theta_star.shape:
            raise ValueError("hessian_diag and theta_star shapes differ")
        if not np.all(self.hessian_diag > 0):
            raise DegenerateProblemError("hessian_diag must be strictly positive")
        _check_in_domain(self.domain, self.theta_star)
        _check_interior(self.domain, self.theta_star)

    @property
    def dimension(self) -> int:
        return self.theta_star.shape[0]

    def value(self, theta) -> float:
        theta = _check_in_domain(self.domain, theta)
        delta = theta - self.theta_star
        return float(0.5 * np.sum(self.hessian_diag * delta * delta))

    def subgradient(self, theta) -> np.ndarray:
        theta = _check_in_domain(self.domain, theta)
        return self.hessian_diag * (theta - self.theta_star)

    def constants(self) -> ProblemConstants:
        m = float(np.min(self.hessian_diag))
        _require_positive_m(m)
        far = self.domain.farthest_distance(self.theta_star)
        sqrt_M = float(np.max(self.hessian_diag)) * far
        return ProblemConstants(m=m, M=sqrt_M**2, sigma2=self.noise.sigma2,
                                L=self.domain.diameter(), theta_star=self.theta_star)


@dataclass(frozen=True)
class QuadPlusL1:
    """Quadratic plus an l1 term c * ||theta - theta*||_1 (non-smooth at theta*)."""

    hessian_diag: np.ndarray
    theta_star: np.ndarray
    l1_weight: float
    domain: Domain
    noise: NoiseModel

    def __post_init__(self):
        object.__setattr__(self, "hessian_diag",
                           np.asarray(self.hessian_diag, dtype=float))
        object.__setattr__(self, "theta_star",
                           np.asarray(self.theta_star, dtype=float))
        if self.hessian_diag.shape != self.theta_star.shape:
            raise ValueError("hessian_diag and theta_star shapes differ")
        if not np.all(self.hessian_diag > 0):
            raise DegenerateProblemError("hessian_diag must be strictly positive")
        if self.l1_weight < 0:
            raise ValueError("l1_weight must be nonnegative")
        _check_in_domain(self.domain, self.theta_star)
        _check_interior(self.domain, self.theta_star)

    @property
    def dimension(self) -> int:
        return self.theta_star.shape[0]

    def value(self, theta) -> float:
        theta = _check_in_domain(self.domain, theta)
        delta = theta - self.theta_star
        quad = 0.5 * np.sum(self.hessian_diag * delta * delta)
        return float(quad + self.l1_weight * np.sum(np.abs(delta)))

    def subgradient(self, theta) -> np.ndarray:
        # At a kink coordinate (theta_k == theta*_k) the l1 component is 0,
        # the minimal-norm deterministic selection.
        theta = _check_in_domain(self.domain, theta)
        delta = theta - self.theta_star
        return self.hessian_diag * delta + self.l1_weight * np.sign(delta)

    def constants(self) -> ProblemConstants:
        m = float(np.min(self.hessian_diag))
        _require_positive_m(m)
        far = self.domain.farthest_distance(self.theta_star)
        sqrt_M = (float(np.max(self.hessian_diag)) * far
                  + self.l1_weight * np.sqrt(self.dimension))
        return ProblemConstants(m=m, M=sqrt_M**2, sigma2=self.noise.sigma2,
                                L=self.domain.diameter(), theta_star=self.theta_star)


@dataclass(frozen=True)
class ErmLeastSquares:
    """f(theta) = 1/(2N) sum_i (x_i^T theta - y_i)^2 over a fixed dataset.

    Noise is either additive (a NoiseModel on top of the exact gradient) or a
    uniformly drawn mini-batch gradient, which is unbiased by construction.
    """

    design: np.ndarray
    targets: np.ndarray
    domain: Domain
    noise: NoiseModel | Minibatch
    theta_star: np.ndarray = field(init=False)

    def __post_init__(self):
        X = np.asarray(self.design, dtype=float)
        y = np.asarray(self.targets, dtype=float)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValueError("design must be N x d with N matching targets")
        if X.shape[0] < X.shape[1] + 1:
            raise ValueError("need at least d+1 rows")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "targets", y)

        n = X.shape[0]
        gram = (X.T @ X) / n
        m = float(np.min(np.linalg.eigvalsh(gram)))
        if m <= 1e-12:
            raise DegenerateProblemError(
                f"(1/N) X^T X has smallest eigenvalue {m:.3e} <= 1e-12"
            )
        theta_star = np.linalg.solve(gram, (X.T @ y) / n)
        residual = np.linalg.norm(gram @ theta_star - (X.T @ y) / n)
        rhs_norm = max(np.linalg.norm((X.T @ y) / n), 1.0)
        if residual / rhs_norm > 1e-10:
            raise DegenerateProblemError("normal equations solve did not converge")
        object.__setattr__(self, "theta_star", theta_star)
        if not np.all(contains(self.domain, theta_star, DOMAIN_TOL)):
            raise ValueError("least-squares solution lies outside the domain")
        _check_interior(self.domain, theta_star)

    @property
    def dimension(self) -> int:
        return self.design.shape[1]

    def value(self, theta) -> float:
        theta = _check_in_domain(self.domain, theta)
        r = self.design @ theta - self.targets
        return float(0.5 * np.mean(r * r))

    def subgradient(self, theta) -> np.ndarray:
        theta = _check_in_domain(self.domain, theta)
        n = self.design.shape[0]
        return (self.design.T @ (self.design @ theta - self.targets)) / n

    def per_sample_gradient(self, theta, indices) -> np.ndarray:
        """Mean gradient over the given sample indices; batched over leading axes."""
        theta = np.asarray(theta, dtype=float)
        X_b = self.design[indices]                      # (..., b, d)
        y_b = self.targets[indices]                     # (..., b)
        resid = np.einsum("...bd,...d->...b", X_b, theta) - y_b
        return np.einsum("...b,...bd->...d", resid, X_b) / resid.shape[-1]

    def constants(self) -> ProblemConstants:
        n = self.design.shape[0]
        gram = (self.design.T @ self.design) / n
        m = float(np.min(np.linalg.eigvalsh(gram)))
        _require_positive_m(m)
        # grad f(theta) = A(theta - theta*) with A = gram; bound over D via
        # the operator norm and the farthest point from theta*.
        op_norm = float(np.max(np.linalg.eigvalsh(gram)))
        sqrt_M = op_norm * self.domain.farthest_distance(self.theta_star)
        return ProblemConstants(m=m, M=sqrt_M**2, sigma2=self._noise_sigma2(),
                                L=self.domain.diameter(), theta_star=self.theta_star)

    def _noise_sigma2(self) -> float:
        if not isinstance(self.noise, Minibatch):
            return self.noise.sigma2
        # Upper bound on the mini-batch gradient variance over D: each
        # per-sample gradient is x_i (x_i^T theta - y_i), linear in theta,
        # so its norm is maximized over the domain in closed form.
        sup_per_sample = 0.0
        for x_i, y_i in zip(self.design, self.targets):
            lo = -self.domain.support(-x_i)
            hi = self.domain.support(x_i)
            sup_resid = max(abs(lo - y_i), abs(hi - y_i))
            sup_per_sample = max(sup_per_sample,
                                 float(np.linalg.norm(x_i)) * sup_resid)
        sqrt_M = self.constants_smooth_grad_bound()
        return (sup_per_sample + sqrt_M) ** 2 / self.noise.batch_size

    def constants_smooth_grad_bound(self) -> float:
        n = self.design.shape[0]
        gram = (self.design.T @ self.design) / n
        op_norm = float(np.max(np.linalg.eigvalsh(gram)))
        return op_norm * self.domain.farthest_distance(self.theta_star)


Problem = Quadratic | QuadPlusL1 | ErmLeastSquares


def _require_positive_m(m: float):
    if m <= 1e-12:
        raise DegenerateProblemError(f"strong-convexity constant {m:.3e} <= 1e-12")


def value(problem: Problem, theta) -> float:
    return problem.value(theta)


def subgradient(problem: Problem, theta) -> np.ndarray:
    return problem.subgradient(theta)


def constants(problem: Problem) -> ProblemConstants:
    return problem.constants()


def subgradient_batch(problem: Problem, theta: np.ndarray) -> np.ndarray:
    """Deterministic subgradient for a batch of iterates, shape (..., d).

    Skips the domain check; the caller (the simulation engine) maintains
    feasibility by projecting every step.
    """
    if isinstance(problem, Quadratic):
        return problem.hessian_diag * (theta - problem.theta_star)
    if isinstance(problem, QuadPlusL1):
        delta = theta - problem.theta_star
        return problem.hessian_diag * delta + problem.l1_weight * np.sign(delta)
    n = problem.design.shape[0]
    resid = theta @ problem.design.T - problem.targets
    return (resid @ problem.design) / n


def noise_sample(problem: Problem, rng: np.random.Generator,
                 n_draws: int) -> np.ndarray:
    """Draw `n_draws` additive-noise vectors, shape (n_draws, d).

    Drawing a block of k vectors consumes the stream exactly like k
    single-draw calls, so replicate blocks can be generated chunk-wise.
    """
    if isinstance(problem.noise, Minibatch):
        raise ValueError("mini-batch problems have no additive noise; "
                         "use minibatch_indices")
    return problem.noise.sample(rng, n_draws, problem.dimension)


def minibatch_indices(problem: ErmLeastSquares, rng: np.random.Generator,
                      n_draws: int) -> np.ndarray:
    batch = problem.noise.batch_size
    return rng.integers(0, problem.design.shape[0], size=(n_draws, batch))


def noisy_gradient(problem: Problem, theta, rng: np.random.Generator) -> np.ndarray:
    """One stochastic gradient sample g = s + n (or a mini-batch gradient)."""
    theta = _check_in_domain(problem.domain, theta)
    if isinstance(problem.noise, Minibatch):
        idx = minibatch_indices(problem, rng, 1)[0]
        return problem.per_sample_gradient(theta, idx)
    return problem.subgradient(theta) + noise_sample(problem, rng, 1)[0]


def load_erm_csv(path, domain: Domain, noise: NoiseModel | Minibatch) -> ErmLeastSquares:
    """Read a (features..., target) CSV into an ERM least-squares problem."""
    rows = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            parsed = []
            for j, cell in enumerate(row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: non-numeric cell at row {i + 1}, column {j + 1}: "
                        f"{cell!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: inconsistent column counts {sorted(widths)}")
    data = np.asarray(rows, dtype=float)
    if data.shape[1] < 2:
        raise ValueError(f"{path}: need at least one feature column plus a target")
    return ErmLeastSquares(design=data[:, :-1], targets=data[:, -1],
                           domain=domain, noise=noise)
