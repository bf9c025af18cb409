"""Covariance matrix adaptation evolution strategy (ask/tell interface).

Canonical formulation: log-rank recombination weights over the better half
of the population, cumulative step-size adaptation, and a rank-1 plus
rank-mu covariance update.  State is immutable; ``tell`` returns a new
state.  ``ask`` derives its random stream from (seed, generation), so it
is pure and reproducible: calling it twice on the same state yields the
same candidates.

Termination combines a loss threshold (convergence), a stagnation rule
(no strict improvement of the best loss for a configured number of
generations) and an evaluation budget, checked in that priority order.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import RadregError


class LengthMismatch(RadregError):
    pass


class NonFiniteLoss(RadregError):
    pass


class Termination(enum.Enum):
    LOSS_THRESHOLD = "LossThreshold"
    STAGNATION = "Stagnation"
    EVALUATION_BUDGET = "EvaluationBudget"


def default_population(n: int) -> int:
    return 4 + int(3 * math.log(n))


@dataclass(frozen=True)
class CmaesConfig:
    n: int
    mean0: Sequence[float]
    sigma0: float
    population: Optional[int] = None
    seed: int = 0
    max_evaluations: int = 20000
    loss_threshold: float = -math.inf
    stagnation_generations: int = 100

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dimension must be >= 1")
        if not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")
        pop = self.population if self.population is not None else default_population(self.n)
        if pop < 2:
            raise ValueError("population must be >= 2")
        if self.stagnation_generations < 1:
            raise ValueError("stagnation_generations must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        mean0 = np.asarray(self.mean0, dtype=float)
        if mean0.shape != (self.n,):
            raise ValueError(f"mean0 must have {self.n} components")
        object.__setattr__(self, "population", int(pop))
        object.__setattr__(self, "mean0", mean0)


@dataclass(frozen=True)
class CmaesState:
    mean: np.ndarray
    sigma: float
    C: np.ndarray
    p_sigma: np.ndarray
    p_c: np.ndarray
    generation: int
    best_loss: float
    best_x: Optional[np.ndarray]
    generations_since_improvement: int


@lru_cache(maxsize=None)
def _strategy_params(n: int, lam: int):
    mu = lam // 2
    raw = np.log(lam / 2 + 0.5) - np.log(np.arange(1, mu + 1))
    weights = raw / raw.sum()
    mueff = 1.0 / np.sum(weights**2)
    cs = (mueff + 2) / (n + mueff + 5)
    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    c1 = 2 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (n + 1)) - 1) + cs
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
    return mu, weights, mueff, cs, cc, c1, cmu, damps, chi_n


def init_state(config: CmaesConfig) -> CmaesState:
    n = config.n
    return CmaesState(
        mean=config.mean0.copy(),
        sigma=float(config.sigma0),
        C=np.eye(n),
        p_sigma=np.zeros(n),
        p_c=np.zeros(n),
        generation=0,
        best_loss=math.inf,
        best_x=None,
        generations_since_improvement=0,
    )


def _decompose(C: np.ndarray):
    evals, B = np.linalg.eigh(C)
    evals = np.maximum(evals, 1e-30)
    return B, np.sqrt(evals)


def ask(state: CmaesState, config: CmaesConfig) -> list:
    """Sample the generation's candidates from N(mean, sigma^2 C)."""
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=config.seed, spawn_key=(state.generation,))
    )
    B, D = _decompose(state.C)
    z = rng.standard_normal((config.population, config.n))
    xs = state.mean + state.sigma * (z * D) @ B.T
    return [xs[k].copy() for k in range(config.population)]


def tell(state: CmaesState, config: CmaesConfig, candidates, losses) -> CmaesState:
    """Rank candidates and apply the distribution update; returns new state."""
    if len(candidates) != len(losses):
        raise LengthMismatch(f"{len(candidates)} candidates but {len(losses)} losses")
    if len(candidates) != config.population:
        raise LengthMismatch(
            f"expected {config.population} candidates, got {len(candidates)}"
        )
    losses = np.asarray(losses, dtype=float)
    if not np.all(np.isfinite(losses)):
        raise NonFiniteLoss("losses must be finite")
    xs = np.asarray(candidates, dtype=float)

    n = config.n
    lam = config.population
    mu, weights, mueff, cs, cc, c1, cmu, damps, chi_n = _strategy_params(n, lam)

    order = np.argsort(losses, kind="stable")
    xsel = xs[order[:mu]]
    mean_old = state.mean
    mean_new = weights @ xsel

    sigma = state.sigma
    y_mean = (mean_new - mean_old) / sigma

    B, D = _decompose(state.C)
    inv_sqrt = (B / D) @ B.T
    p_sigma = (1 - cs) * state.p_sigma + math.sqrt(cs * (2 - cs) * mueff) * (inv_sqrt @ y_mean)

    gen1 = state.generation + 1
    ps_norm = float(np.linalg.norm(p_sigma))
    hsig = ps_norm / math.sqrt(1 - (1 - cs) ** (2 * gen1)) < (1.4 + 2 / (n + 1)) * chi_n
    p_c = (1 - cc) * state.p_c + (math.sqrt(cc * (2 - cc) * mueff) * y_mean if hsig else 0.0)

    ys = (xsel - mean_old) / sigma
    rank_mu = (weights[:, None] * ys).T @ ys
    C = (
        (1 - c1 - cmu) * state.C
        + c1 * (np.outer(p_c, p_c) + (0.0 if hsig else cc * (2 - cc)) * state.C)
        + cmu * rank_mu
    )
    C = (C + C.T) / 2.0
    evals = np.linalg.eigvalsh(C)
    if evals[0] <= 0:  # keep C positive definite against numerical drift
        C = C + (1e-30 - evals[0]) * np.eye(n)

    sigma_new = sigma * math.exp((cs / damps) * (ps_norm / chi_n - 1))

    gen_best = int(order[0])
    if losses[gen_best] < state.best_loss:
        best_loss = float(losses[gen_best])
        best_x = xs[gen_best].copy()
        since = 0
    else:
        best_loss = state.best_loss
        best_x = state.best_x
        since = state.generations_since_improvement + 1

    return CmaesState(
        mean=mean_new,
        sigma=float(sigma_new),
        C=C,
        p_sigma=p_sigma,
        p_c=p_c,
        generation=gen1,
        best_loss=best_loss,
        best_x=best_x,
        generations_since_improvement=since,
    )


def should_terminate(state: CmaesState, config: CmaesConfig) -> Optional[Termination]:
    if state.best_loss <= config.loss_threshold:
        return Termination.LOSS_THRESHOLD
    if state.generations_since_improvement >= config.stagnation_generations:
        return Termination.STAGNATION
    if state.generation * config.population >= config.max_evaluations:
        return Termination.EVALUATION_BUDGET
    return None


@dataclass(frozen=True)
class MinimizeResult:
    best_x: np.ndarray
    best_loss: float
    termination: Termination
    history: list = field(default_factory=list)  # per-generation best loss
    evaluations: int = 0


def minimize(loss_fn: Callable, config: CmaesConfig, workers: Optional[int] = None) -> MinimizeResult:
    """Run the ask/tell loop until a termination rule fires.

    ``workers`` > 1 evaluates a generation's candidates in a thread pool;
    losses are matched to candidates by index, so results are identical to
    the sequential run.
    """
    state = init_state(config)
    history = []
    termination = should_terminate(state, config)
    pool = ThreadPoolExecutor(max_workers=workers) if workers and workers > 1 else None
    try:
        while termination is None:
            candidates = ask(state, config)
            if pool is not None:
                losses = list(pool.map(loss_fn, candidates))
            else:
                losses = [loss_fn(x) for x in candidates]
            state = tell(state, config, candidates, losses)
            history.append(float(min(losses)))
            termination = should_terminate(state, config)
    finally:
        if pool is not None:
            pool.shutdown()
    return MinimizeResult(
        best_x=state.best_x if state.best_x is not None else config.mean0.copy(),
        best_loss=state.best_loss,
        termination=termination,
        history=history,
        evaluations=state.generation * config.population,
    )
