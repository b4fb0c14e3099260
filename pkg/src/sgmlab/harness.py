"""Monte Carlo experiment engine.

Replicates are advanced as one batched state of shape (R, d): the update
kernels broadcast, so this is arithmetically identical to R scalar
trajectories while running orders of magnitude faster. Each replicate owns
its own random stream seeded from (master_seed, replicate_index), so
splitting the replicate range across workers or invocations never changes
any value, and aggregation is always done in replicate-index order.
"""

from __future__ import annotations

import hashlib
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, is_dataclass, fields

import numpy as np

from . import estimators as est_mod
from . import optimizers as opt_mod
from . import problems as prob_mod
from .bounds import BoundSequence, RateEnvelope, constant_step_plateau, stage_burn_in
from .optimizers import NumericFailureError, SGM, Variant
from .problems import Problem
from .schedules import MomentumSchedule, StepSchedule, validate

NOISE_CHUNK = 2048


def default_checkpoints(horizon: int) -> tuple:
    """Geometric grid {ceil(1.3^i)} intersected with [1, horizon]."""
    pts = set()
    x = 1.0
    while x <= horizon:
        pts.add(int(np.ceil(x)))
        x *= 1.3
    pts.add(horizon)
    return tuple(sorted(pts))


@dataclass(frozen=True)
class ExperimentConfig:
    problem: Problem
    variant: Variant
    step: StepSchedule
    momentum: MomentumSchedule
    estimator: str = "last"
    suffix_start: int = 0
    theta0: object = "random-interior"   # vector or "random-interior"
    horizon: int = 1000
    checkpoints: tuple | None = None
    replicates: int = 2
    master_seed: int = 0
    workers: int = 1
    force_schedule: bool = False

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("need at least 2 replicates")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.estimator not in est_mod.ESTIMATOR_NAMES:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        cps = self.checkpoints
        if cps is None:
            cps = default_checkpoints(self.horizon)
        cps = tuple(int(c) for c in cps)
        if any(b <= a for a, b in zip(cps, cps[1:])) or not cps:
            raise ValueError("checkpoints must be strictly increasing")
        if cps[0] < 1 or cps[-1] > self.horizon:
            raise ValueError("checkpoints must lie in [1, horizon]")
        object.__setattr__(self, "checkpoints", cps)
        if isinstance(self.theta0, str):
            if self.theta0 != "random-interior":
                raise ValueError("theta0 must be a vector or 'random-interior'")
        else:
            object.__setattr__(self, "theta0",
                               np.asarray(self.theta0, dtype=float))


@dataclass(frozen=True)
class RunSummary:
    checkpoints: tuple
    mse_mean: np.ndarray
    mse_sem: np.ndarray
    estimator: str
    replicates: int
    master_seed: int
    config_hash: str
    wall_time: float


@dataclass(frozen=True)
class RateFit:
    exponent: float
    log_constant: float
    r2: float


@dataclass(frozen=True)
class DominanceReport:
    checked: tuple                 # checkpoint indices tested
    violations: tuple              # (checkpoint, mse_mean, bound_value)
    first_violation: int | None
    calibrated_constant: float | None

    @property
    def passed(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class StageReport:
    step: float
    length: int
    burn_in: int
    suffix_mse_mean: float
    suffix_mse_sem: float
    plateau: float


def _replicate_rng(master_seed: int, replicate: int) -> np.random.Generator:
    # SeedSequence mixes (entropy, spawn_key) with good avalanche behavior.
    return np.random.default_rng(
        np.random.SeedSequence(entropy=master_seed, spawn_key=(replicate,)))


def _init_block(problem: Problem, variant: Variant, theta0, master_seed: int,
                rep_lo: int, rep_hi: int):
    """Per-replicate streams and the batched initial state for a block."""
    domain = problem.domain
    rngs = [_replicate_rng(master_seed, r) for r in range(rep_lo, rep_hi)]
    if isinstance(theta0, str):
        theta0 = np.stack([domain.sample_interior(rng) for rng in rngs])
    else:
        theta0 = np.tile(theta0, (rep_hi - rep_lo, 1))
    state = opt_mod.init(theta0, variant, domain)
    return rngs, state


def _draw_noise(problem: Problem, rngs, n_steps: int):
    """(block, n_steps, d) noise block, or index arrays for mini-batch mode."""
    if isinstance(problem.noise, prob_mod.Minibatch):
        return np.stack([prob_mod.minibatch_indices(problem, rng, n_steps)
                         for rng in rngs])
    return np.stack([prob_mod.noise_sample(problem, rng, n_steps)
                     for rng in rngs])


def _gradient(problem: Problem, theta: np.ndarray, noise_slice) -> np.ndarray:
    if isinstance(problem.noise, prob_mod.Minibatch):
        return problem.per_sample_gradient(theta, noise_slice)
    return prob_mod.subgradient_batch(problem, theta) + noise_slice


def _advance_block(problem, variant, state, rngs, t_arr, eta_arr, estimator,
                   record_at: dict, out: np.ndarray, j_offset: int = 0,
                   rep_lo: int = 0):
    """Advance n = len(t_arr) steps, filling `out[k]` with per-replicate
    squared estimator errors at recorded checkpoints."""
    theta_star = problem.theta_star
    domain = problem.domain
    n_steps = len(t_arr)
    pos = 0
    while pos < n_steps:
        chunk = min(NOISE_CHUNK, n_steps - pos)
        noise = _draw_noise(problem, rngs, chunk)
        for i in range(chunk):
            j = j_offset + pos + i
            g = _gradient(problem, state.theta_curr, noise[:, i])
            params = opt_mod.StepParams(step=float(t_arr[pos + i]),
                                        weight=float(eta_arr[pos + i]))
            try:
                state = opt_mod.step(state, g, params, variant, domain)
            except NumericFailureError:
                bad = np.flatnonzero(~np.all(np.isfinite(g), axis=-1)
                                     | ~np.all(np.isfinite(state.theta_curr),
                                               axis=-1))
                rep = rep_lo + (int(bad[0]) if bad.size else 0)
                raise NumericFailureError(
                    f"non-finite value in replicate {rep}", j) from None
            estimator.observe(state.theta_curr, j + 1)
            if (j + 1) in record_at:
                delta = estimator.current() - theta_star
                out[record_at[j + 1]] = np.sum(delta * delta, axis=-1)
        pos += chunk
    return state


def _run_block(config: ExperimentConfig, rep_lo: int, rep_hi: int) -> np.ndarray:
    rngs, state = _init_block(config.problem, config.variant, config.theta0,
                              config.master_seed, rep_lo, rep_hi)
    t_arr = np.asarray(config.step.step_size(np.arange(config.horizon)), float)
    eta_arr = np.asarray(config.momentum.weight(np.arange(config.horizon), t_arr),
                         float)
    estimator = est_mod.make_estimator(config.estimator, config.suffix_start)
    estimator.observe(state.theta_curr, 0)
    record_at = {c: k for k, c in enumerate(config.checkpoints)}
    out = np.empty((len(config.checkpoints), rep_hi - rep_lo))
    _advance_block(config.problem, config.variant, state, rngs, t_arr, eta_arr,
                   estimator, record_at, out, rep_lo=rep_lo)
    return out


def _worker_ranges(replicates: int, workers: int):
    workers = max(1, min(workers, replicates))
    edges = np.linspace(0, replicates, workers + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges, edges[1:]) if b > a]


def _fingerprint(obj) -> str:
    h = hashlib.sha256()

    def feed(x):
        if is_dataclass(x) and not isinstance(x, type):
            feed(type(x).__name__)
            for f in fields(x):
                if f.name.startswith("_"):
                    continue
                feed(f.name)
                feed(getattr(x, f.name))
        elif isinstance(x, np.ndarray):
            h.update(x.tobytes())
        elif isinstance(x, (list, tuple)):
            for item in x:
                feed(item)
        else:
            h.update(repr(x).encode())

    feed(obj)
    return h.hexdigest()[:16]


def run_replicates(config: ExperimentConfig) -> RunSummary:
    """Run R independent replicates and aggregate squared estimator errors
    at every checkpoint, deterministically in replicate-index order."""
    m = config.problem.constants().m
    report = validate(config.step, config.momentum, m, config.horizon)
    if not report.ok and not config.force_schedule:
        raise ValueError(f"schedule validation failed:\n{report}")

    start = time.perf_counter()
    ranges = _worker_ranges(config.replicates, config.workers)
    if len(ranges) == 1:
        blocks = [_run_block(config, *ranges[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(ranges)) as pool:
            futures = [pool.submit(_run_block, config, lo, hi)
                       for lo, hi in ranges]
            blocks = [f.result() for f in futures]
    errors = np.concatenate(blocks, axis=1)   # (n_checkpoints, R)
    mse_mean = errors.mean(axis=1)
    mse_sem = errors.std(axis=1, ddof=1) / np.sqrt(config.replicates)
    return RunSummary(
        checkpoints=config.checkpoints,
        mse_mean=mse_mean,
        mse_sem=mse_sem,
        estimator=config.estimator,
        replicates=config.replicates,
        master_seed=config.master_seed,
        config_hash=_fingerprint(config),
        wall_time=time.perf_counter() - start,
    )


def fit_rate(summary: RunSummary, window: tuple) -> RateFit:
    """Least-squares fit of log(mse) against log(checkpoint + 1) inside the
    window; the slope estimates the convergence order."""
    j_lo, j_hi = window
    cps = np.asarray(summary.checkpoints)
    mask = (cps >= j_lo) & (cps <= j_hi)
    if mask.sum() < 4:
        raise ValueError(f"need >= 4 checkpoints in window, got {int(mask.sum())}")
    mse = summary.mse_mean[mask]
    if np.any(mse <= 0):
        raise ValueError("all mse_mean values in the window must be positive")
    x = np.log(cps[mask] + 1.0)
    y = np.log(mse)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return RateFit(exponent=float(slope), log_constant=float(intercept), r2=r2)


def dominance_check(summary: RunSummary,
                    bound: BoundSequence | RateEnvelope) -> DominanceReport:
    """Verify mse_mean <= bound + 3*sem at the checkpoints.

    A RateEnvelope with an uncalibrated constant is fitted on the first half
    of the checkpoints and tested out-of-sample on the second half.
    """
    cps = np.asarray(summary.checkpoints)
    calibrated_constant = None
    if isinstance(bound, BoundSequence):
        if cps[-1] >= len(bound.values):
            raise ValueError("bound sequence shorter than the last checkpoint")
        values = bound.at(cps)
        tested = np.arange(len(cps))
    else:
        env = bound
        if env.constant is None:
            half = len(cps) // 2
            if half < 1 or len(cps) - half < 1:
                raise ValueError("need at least 2 checkpoints to calibrate")
            shape = env.shape(cps[:half])
            calibrated_constant = float(np.max(summary.mse_mean[:half] / shape))
            env = env.calibrated(calibrated_constant)
            tested = np.arange(half, len(cps))
        else:
            tested = np.arange(len(cps))
        values = np.asarray(env.at(cps), dtype=float)

    violations = []
    for k in tested:
        if summary.mse_mean[k] > values[k] + 3.0 * summary.mse_sem[k]:
            violations.append((int(cps[k]), float(summary.mse_mean[k]),
                               float(values[k])))
    first = violations[0][0] if violations else None
    return DominanceReport(checked=tuple(int(cps[k]) for k in tested),
                           violations=tuple(violations),
                           first_violation=first,
                           calibrated_constant=calibrated_constant)


def resolve_stages(problem: Problem, stages) -> list:
    """Resolve (a_k, n_k | 'auto') into concrete (a_k, length, burn_in).

    'auto' uses the burn-in index with the conservative start error L^2.
    """
    consts = problem.constants()
    resolved = []
    prev_a = None
    for a_k, n_k in stages:
        a_k = float(a_k)
        if not 0 < a_k < 1.0 / consts.m:
            raise ValueError(f"stage step {a_k} outside (0, 1/m)")
        if prev_a is not None and a_k >= prev_a:
            raise ValueError("stage steps must be strictly decreasing")
        prev_a = a_k
        burn = stage_burn_in(a_k, consts.m, consts.L ** 2, consts.M,
                             consts.sigma2)
        length = burn if n_k == "auto" else int(n_k)
        if length < 1:
            raise ValueError("stage length must be >= 1")
        resolved.append((a_k, length, burn))
    return resolved


def drop_stages(a0: float, n0: int, num_stages: int) -> list:
    """Default constant-and-drop policy: halve the step, double the length."""
    return [(a0 / 2 ** k, n0 * 2 ** k) for k in range(num_stages)]


def _run_multistage_block(problem, variant, momentum, resolved, theta0,
                          master_seed, rep_lo, rep_hi) -> np.ndarray:
    rngs, state = _init_block(problem, variant, theta0, master_seed,
                              rep_lo, rep_hi)
    theta_star = problem.theta_star
    out = np.empty((len(resolved), rep_hi - rep_lo))
    for k, (a_k, length, _burn) in enumerate(resolved):
        # Stage start: schedule index resets, momentum memory is wiped.
        state = opt_mod.IterateState(theta_curr=state.theta_curr,
                                     theta_prev=state.theta_curr,
                                     velocity=np.zeros_like(state.velocity),
                                     j=0)
        t_arr = np.full(length, a_k)
        eta_arr = np.asarray(momentum.weight(np.arange(length), t_arr), float)
        estimator = est_mod.SuffixAverage(start_index=0)
        estimator.observe(state.theta_curr, 0)
        state = _advance_block(problem, variant, state, rngs, t_arr, eta_arr,
                               estimator, {}, out[k:k], rep_lo=rep_lo)
        delta = estimator.current() - theta_star
        out[k] = np.sum(delta * delta, axis=-1)
    return out


def run_multistage(problem: Problem, stages, momentum: MomentumSchedule, *,
                   variant: Variant = SGM(), theta0="random-interior",
                   replicates: int = 2, master_seed: int = 0,
                   workers: int = 1) -> list:
    """Constant-and-drop driver: per stage, a constant step a_k, re-initialized
    momentum, and a fresh suffix average; stage k+1 continues from stage k's
    final iterates. Returns one StageReport per stage."""
    resolved = resolve_stages(problem, stages)
    consts = problem.constants()
    if not isinstance(theta0, str):
        theta0 = np.asarray(theta0, dtype=float)
    ranges = _worker_ranges(replicates, workers)
    args = (problem, variant, momentum, resolved, theta0, master_seed)
    if len(ranges) == 1:
        blocks = [_run_multistage_block(*args, *ranges[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(ranges)) as pool:
            futures = [pool.submit(_run_multistage_block, *args, lo, hi)
                       for lo, hi in ranges]
            blocks = [f.result() for f in futures]
    errors = np.concatenate(blocks, axis=1)   # (n_stages, R)
    reports = []
    for k, (a_k, length, burn) in enumerate(resolved):
        reports.append(StageReport(
            step=a_k,
            length=length,
            burn_in=burn,
            suffix_mse_mean=float(errors[k].mean()),
            suffix_mse_sem=float(errors[k].std(ddof=1) / np.sqrt(replicates)),
            plateau=constant_step_plateau(a_k, consts.m, consts.M,
                                          consts.sigma2),
        ))
    return reports
