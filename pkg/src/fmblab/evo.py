"""Gaussian-population black-box search with rank-weighted recombination.

Samples candidate parameter vectors from a multivariate Gaussian, turns
ranked performance into relative fitness, and moves the sampling mean by
the population's selection response Cov(w, theta).  The sampling
covariance blends toward the fitness-weighted covariance of the
successful deviations, shrinking along harshly curved directions and
stretching along flat ones.

No evolution paths or step-size adaptation: mean and covariance updates
stay in one-to-one correspondence with the selection terms of the
population bookkeeping in ``price``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .price import Population, lande_step

COV_FLOOR = 1e-12


@dataclass(frozen=True)
class EsState:
    """Sampling distribution: mean, shape covariance, and global scale."""

    mean: np.ndarray
    cov: np.ndarray
    sigma: float
    generation: int = 0
    rng_seed: int = 0

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError("covariance shape must match the mean")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0.0:
            raise ValueError("covariance must be positive definite")
        if self.sigma <= 0.0:
            raise ValueError("step scale must be positive")
        if self.generation < 0 or self.rng_seed < 0:
            raise ValueError("generation and rng_seed must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "sigma", float(self.sigma))

    @classmethod
    def initial(cls, mean, sigma: float = 1.0, seed: int = 0) -> "EsState":
        mean = np.asarray(mean, dtype=float)
        return cls(mean=mean, cov=np.eye(mean.shape[0]), sigma=sigma, rng_seed=seed)


@dataclass(frozen=True)
class EsSample:
    """One generation's sampled population plus its raw performance values."""

    population: Population
    values: np.ndarray


def _generation_rng(state: EsState) -> np.random.Generator:
    return np.random.default_rng([state.rng_seed, state.generation])


def rank_utilities(values: np.ndarray) -> np.ndarray:
    """Log-rank recombination weights: top half positive, rest zero.

    Rank r (1 = best) in the top ceil(m/2) gets log(m/2 + 0.5) - log(r);
    ties are broken by sample index so runs are reproducible.
    """
    values = np.asarray(values, dtype=float)
    m = values.shape[0]
    order = np.argsort(-values, kind="stable")
    keep = math.ceil(m / 2)
    utilities = np.zeros(m)
    base = math.log(m / 2 + 0.5)
    for rank in range(1, keep + 1):
        utilities[order[rank - 1]] = max(base - math.log(rank), 0.0)
    return utilities


def es_sample(state: EsState, pop_size: int, obj) -> EsSample:
    """Draw a population around the current mean and score it by rank.

    Returns uniform-weight population data with rank-based relative
    fitness; the raw objective values ride along for diagnostics.

    Raises
    ------
    ValueError
        On a non-finite objective value (reporting the offending
        sample), or when every sample performs identically
        ("degenerate fitness": ranking carries no signal).
    """
    if pop_size < 2:
        raise ValueError("pop_size must be at least 2")
    rng = _generation_rng(state)
    n = state.mean.shape[0]
    chol = np.linalg.cholesky(state.cov)
    draws = state.mean + state.sigma * rng.standard_normal((pop_size, n)) @ chol.T
    values = np.array([obj.value(x) for x in draws], dtype=float)
    bad = ~np.isfinite(values)
    if np.any(bad):
        raise ValueError(f"non-finite objective value at sample {draws[bad][0]}")
    if np.all(values == values[0]):
        raise ValueError("degenerate fitness: no performance variation in sample")
    utilities = rank_utilities(values)
    pop = Population(
        q=np.full(pop_size, 1.0 / pop_size),
        theta=draws,
        w=utilities,
    )
    return EsSample(population=pop, values=values)


def floor_pd(cov: np.ndarray, rel_floor: float = COV_FLOOR) -> np.ndarray:
    """Clamp eigenvalues below rel_floor times the largest."""
    sym = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    floor = rel_floor * float(eigvals[-1])
    return (eigvecs * np.maximum(eigvals, floor)) @ eigvecs.T


def es_update(state: EsState, pop: Population, c_mu: float = 0.3) -> EsState:
    """Move the mean by the selection response and blend the covariance.

    The mean update is exactly Cov(w, theta) on the sampled population;
    the covariance blends toward the fitness-weighted outer products of
    the sampled deviations (in sigma-normalized coordinates), floored to
    stay positive definite.
    """
    if not 0.0 < c_mu <= 1.0:
        raise ValueError("c_mu must lie in (0, 1]")
    selection = lande_step(pop)
    devs = (pop.theta - state.mean) / state.sigma
    weighted = pop.q * pop.w
    cov_sel = (weighted[:, None] * devs).T @ devs
    blended = (1.0 - c_mu) * state.cov + c_mu * cov_sel
    return replace(
        state,
        mean=state.mean + selection,
        cov=floor_pd(blended),
        generation=state.generation + 1,
    )


def es_optimize(
    obj, init: EsState, generations: int, pop_size: int, c_mu: float = 0.3
) -> tuple[EsState, list[dict]]:
    """Run sample/update cycles; deterministic given the state's seed.

    The trace has one row per generation with best and mean performance,
    covariance summaries, and the distance to the known optimum when the
    objective exposes ``argmax``.
    """
    if generations < 0:
        raise ValueError("generations must be nonnegative")
    state = init
    trace: list[dict] = []
    target = obj.argmax() if hasattr(obj, "argmax") else None
    for _ in range(int(generations)):
        sample = es_sample(state, pop_size, obj)
        eigvals = np.linalg.eigvalsh(state.cov)
        row = {
            "generation": state.generation,
            "best_value": float(sample.values.max()),
            "mean_value": float(sample.values.mean()),
            "cov_trace": float(np.trace(state.cov)),
            "cov_eigmin": float(eigvals[0]),
        }
        if target is not None:
            row["mean_error"] = float(np.linalg.norm(state.mean - target))
        trace.append(row)
        state = es_update(state, sample.population, c_mu=c_mu)
    return state, trace
