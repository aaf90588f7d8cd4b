"""Multilevel selection: recursive Price accounting and two-loop experiments.

A grouped population splits the change in the global mean into a
between-group part (selection on group means) and within-group parts,
and the metric/force/bias statistics split the same way: the total
parameter covariance is the between-group covariance plus the mean
within-group covariance, and the total update is reconstructed from the
per-level pieces.

Two experiments exercise the two transmission regimes.  The bit-string
search shows nonheritable within-lifetime learning turning a
needle-in-a-haystack landscape into a graded one; the two-loop
optimizer blends an inner optimization run back into a slowly moving
outer iterate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import optim
from .price import (
    RCOND,
    Population,
    PriceDecomposition,
    price_update,
    weighted_cov_matrix,
)

_Q_TOL = 1e-12


@dataclass(frozen=True)
class GroupedPopulation:
    """Population partitioned into groups with their own internal weights.

    Each group is a Population whose fitness is normalized within the
    group; ``group_fitness`` carries the group means on the global scale
    (their weighted mean is one), so the product recovers every
    member's global relative fitness.
    """

    groups: tuple
    group_weights: np.ndarray
    group_fitness: np.ndarray

    def __post_init__(self):
        groups = tuple(self.groups)
        qg = np.asarray(self.group_weights, dtype=float)
        wg = np.asarray(self.group_fitness, dtype=float)
        if len(groups) == 0:
            raise ValueError("grouped population needs at least one group")
        if any(g.size == 0 for g in groups):
            raise ValueError("empty group")
        if qg.shape != (len(groups),) or wg.shape != (len(groups),):
            raise ValueError("group weights and fitness must match the group count")
        if np.any(qg < 0) or abs(qg.sum() - 1.0) > _Q_TOL:
            raise ValueError("group weights must be a probability vector")
        if np.any(wg < 0) or abs(float(qg @ wg) - 1.0) > 1e-9:
            raise ValueError("group fitness must have weighted mean one")
        dims = {g.dim for g in groups}
        if len(dims) != 1:
            raise ValueError("groups must share the parameter dimension")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "group_weights", qg)
        object.__setattr__(self, "group_fitness", wg / float(qg @ wg))

    @classmethod
    def from_raw(
        cls, group_weights, member_weights, thetas, raw_fitness, dthetas=None
    ) -> "GroupedPopulation":
        """Build from per-group member data with fitness on a common scale."""
        qg = np.asarray(group_weights, dtype=float)
        n_groups = len(member_weights)
        if dthetas is None:
            dthetas = [None] * n_groups
        group_means = []
        for qj, raw in zip(member_weights, raw_fitness):
            group_means.append(float(np.asarray(qj) @ np.asarray(raw, dtype=float)))
        overall = float(qg @ np.asarray(group_means))
        if overall <= 0:
            raise ValueError("degenerate fitness: no group performs")
        groups = [
            Population(q=qj, theta=th, w=raw, dtheta=dth)
            for qj, th, raw, dth in zip(member_weights, thetas, raw_fitness, dthetas)
        ]
        return cls(
            groups=groups,
            group_weights=qg,
            group_fitness=np.asarray(group_means) / overall,
        )

    def flatten(self) -> Population:
        """Single-level population with weights q_g * q_{j|g} and global fitness."""
        qs, ws, thetas, dthetas = [], [], [], []
        for qg, wg, group in zip(self.group_weights, self.group_fitness, self.groups):
            qs.append(qg * group.q)
            ws.append(wg * group.w)
            thetas.append(group.theta)
            dthetas.append(group.dtheta)
        return Population(
            q=np.concatenate(qs),
            theta=np.vstack(thetas),
            w=np.concatenate(ws),
            dtheta=np.vstack(dthetas),
        )


def hierarchical_price(
    gpop: GroupedPopulation,
) -> tuple[PriceDecomposition, list[PriceDecomposition], np.ndarray]:
    """Two-level split of the change in the global mean parameters.

    The within-group decompositions give each group's mean change; the
    between-group decomposition treats group means as the variants and
    the within-group changes as their transmission.  The between-level
    total equals the flat single-level change.
    """
    within = [price_update(g) for g in gpop.groups]
    group_means = np.vstack([g.mean_theta() for g in gpop.groups])
    group_deltas = np.vstack([w.delta_mean for w in within])
    between_pop = Population(
        q=gpop.group_weights,
        theta=group_means,
        w=gpop.group_fitness,
        dtheta=group_deltas,
    )
    between = price_update(between_pop)
    return between, within, between.delta_mean


@dataclass(frozen=True)
class HierFmb:
    """Metric/force/bias statistics split across hierarchy levels.

    Totals come from the flattened population; construction enforces
    the total-covariance law M = M_B + E(M_g) and the two-level
    reconstruction of the flat mean change.
    """

    group_weights: np.ndarray
    M_between: np.ndarray
    f_between: np.ndarray
    b_between: np.ndarray
    M_within: list
    f_within: list
    b_within_resid: list
    M_total: np.ndarray
    f_total: np.ndarray
    b_total: np.ndarray
    delta_mean: np.ndarray

    def __post_init__(self):
        qg = self.group_weights
        law = self.M_between + sum(w * m for w, m in zip(qg, self.M_within))
        if np.max(np.abs(self.M_total - law)) > 1e-10 * max(
            1.0, float(np.max(np.abs(self.M_total)))
        ):
            raise ValueError("total covariance law violated")
        if np.max(np.abs(self.reconstruct() - self.delta_mean)) > 1e-8:
            raise ValueError("hierarchical reconstruction violated")

    def reconstruct(self) -> np.ndarray:
        """Between-level drive plus the weighted within-level drives."""
        return (
            self.M_between @ self.f_between
            + self.b_between
            + sum(
                w * (m @ f + b)
                for w, m, f, b in zip(
                    self.group_weights,
                    self.M_within,
                    self.f_within,
                    self.b_within_resid,
                )
            )
        )


def hierarchical_fmb(gpop: GroupedPopulation) -> HierFmb:
    """Between/within metric-force-bias statistics of a grouped population.

    Between-group terms regress group mean fitness on group mean
    parameters.  Within-group forces regress global-scale fitness on
    member parameters, and the group bias splits into its weighted mean
    (the between-level bias) plus zero-mean residuals.
    """
    qg = gpop.group_weights
    group_means = np.vstack([g.mean_theta() for g in gpop.groups])
    m_between = weighted_cov_matrix(qg, group_means)
    cov_wg = (qg * gpop.group_fitness) @ group_means - qg @ group_means
    f_between, *_ = np.linalg.lstsq(m_between, cov_wg, rcond=RCOND)

    m_within, f_within, b_within = [], [], []
    for wg, group in zip(gpop.group_fitness, gpop.groups):
        m_g = weighted_cov_matrix(group.q, group.theta)
        dec = price_update(group)
        # Global-scale fitness within the group is wg * (normalized w).
        f_g, *_ = np.linalg.lstsq(m_g, wg * dec.selection_term, rcond=RCOND)
        m_within.append(m_g)
        f_within.append(f_g)
        b_within.append(wg * dec.transmission_term)

    b_between = sum(w * b for w, b in zip(qg, b_within))
    b_resid = [b - b_between for b in b_within]

    flat = gpop.flatten()
    m_total = weighted_cov_matrix(flat.q, flat.theta)
    drive = m_between @ f_between + sum(
        w * (m @ f) for w, m, f in zip(qg, m_within, f_within)
    )
    f_total, *_ = np.linalg.lstsq(m_total, drive, rcond=RCOND)

    return HierFmb(
        group_weights=qg,
        M_between=m_between,
        f_between=f_between,
        b_between=b_between,
        M_within=m_within,
        f_within=f_within,
        b_within_resid=b_resid,
        M_total=m_total,
        f_total=f_total,
        b_total=b_between,
        delta_mean=price_update(flat).delta_mean,
    )


@dataclass(frozen=True)
class BaldwinConfig:
    """Bit-string search with a within-lifetime learning period.

    Each individual inherits a bit string; during its lifetime it runs
    ``learn_trials`` random bit-flip searches (each trial flips every
    bit independently with probability ``flip_prob``, default
    1/genome_len) and scores by the probability that some trial hits
    the all-ones target.  ``heritable`` switches transmission from the
    inherited seed to the best string found while learning.
    """

    pop_size: int
    learn_trials: int
    generations: int
    mutation_rate: float
    seed: int
    genome_len: int = 20
    heritable: bool = False
    flip_prob: float | None = None
    simulate_learning: bool | None = None

    def __post_init__(self):
        if self.genome_len < 1 or self.pop_size < 1 or self.generations < 1:
            raise ValueError("genome_len, pop_size, generations must be >= 1")
        if self.learn_trials < 0:
            raise ValueError("learn_trials must be >= 0")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise ValueError("mutation_rate must lie in [0, 1]")
        if self.flip_prob is not None and not 0.0 < self.flip_prob < 1.0:
            raise ValueError("flip_prob must lie in (0, 1)")

    @property
    def effective_flip_prob(self) -> float:
        if self.flip_prob is not None:
            return self.flip_prob
        return min(1.0 / self.genome_len, 0.5)

    @property
    def needs_simulation(self) -> bool:
        # Heritable transmission needs realized learned strings.
        if self.simulate_learning is not None:
            return self.simulate_learning
        return self.heritable


@dataclass(frozen=True)
class BaldwinResult:
    """Outcome of one bit-string run; traces are per scored generation."""

    success: bool
    generations_to_target: int | None
    mean_hamming_trace: np.ndarray
    best_hamming_trace: np.ndarray
    mean_fitness_trace: np.ndarray


# Keeps all-zero-performance populations selectable (uniformly) without
# flattening the relative-fitness gradient anywhere else.
_FITNESS_FLOOR = 1e-300


def _analytic_fitness(
    distance: np.ndarray, genome_len: int, trials: int, flip_prob: float
) -> np.ndarray:
    """P(some trial reaches the target) as a function of Hamming distance.

    One trial succeeds iff it flips exactly the wrong bits, probability
    flip_prob^d (1-flip_prob)^(len-d); the fitness is the chance that
    at least one of ``trials`` independent tries succeeds.
    """
    out = np.full(distance.shape, _FITNESS_FLOOR)
    hit = distance == 0
    out[hit] = 1.0
    if trials > 0:
        d = distance[~hit].astype(float)
        log_reach = d * math.log(flip_prob) + (genome_len - d) * np.log1p(-flip_prob)
        # 1 - (1 - p)^T, computed in log space for tiny p.
        prob = -np.expm1(trials * np.log1p(-np.exp(log_reach)))
        out[~hit] += prob
    return out


def largest_remainder_counts(expected: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation of ``total`` slots matching expected counts.

    Floors the expectations, then hands the remaining slots to the
    largest fractional parts (ties broken by index) so runs are
    reproducible.
    """
    floors = np.floor(expected).astype(int)
    deficit = int(total - floors.sum())
    if deficit > 0:
        frac = expected - np.floor(expected)
        order = np.argsort(-frac, kind="stable")
        floors[order[:deficit]] += 1
    return floors


def baldwin_experiment(cfg: BaldwinConfig) -> BaldwinResult:
    """Run the bit-string search and report when the target takes over.

    Succeeds at the first scored generation whose modal genotype is the
    all-ones target.  Fitness is the (analytic or simulated) chance
    that an individual's learning period reaches the target, selection
    is fitness-proportional with deterministic largest-remainder
    allocation, and transmission copies seeds (or best learned strings
    when heritable) with per-bit mutation.
    """
    length = cfg.genome_len
    flip_prob = cfg.effective_flip_prob
    rng_init = np.random.default_rng([cfg.seed, 0])
    genomes = (rng_init.random((cfg.pop_size, length)) < 0.5).astype(np.uint8)

    mean_h, best_h, mean_fit = [], [], []
    success = False
    hit_generation: int | None = None

    for gen in range(cfg.generations + 1):
        rng = np.random.default_rng([cfg.seed, gen + 1])
        distance = length - genomes.sum(axis=1)
        mean_h.append(float(distance.mean()))
        best_h.append(int(distance.min()))

        transmitted = genomes
        if cfg.needs_simulation and cfg.learn_trials > 0:
            flips = rng.random((cfg.pop_size, cfg.learn_trials, length)) < flip_prob
            trials = genomes[:, None, :] ^ flips
            trial_dist = length - trials.sum(axis=2)
            best_trial = np.argmin(trial_dist, axis=1)
            best_dist = trial_dist[np.arange(cfg.pop_size), best_trial]
            hit = (distance == 0) | (best_dist == 0)
            fitness = _FITNESS_FLOOR + hit.astype(float)
            if cfg.heritable:
                learned = trials[np.arange(cfg.pop_size), best_trial]
                transmitted = np.where(
                    (best_dist < distance)[:, None], learned, genomes
                ).astype(np.uint8)
        else:
            fitness = _analytic_fitness(distance, length, cfg.learn_trials, flip_prob)
        mean_fit.append(float(fitness.mean()))

        # Modal genotype check: does the target outnumber every rival?
        rows, counts = np.unique(genomes, axis=0, return_counts=True)
        target_rows = np.all(rows == 1, axis=1)
        target_count = int(counts[target_rows][0]) if target_rows.any() else 0
        if target_count > 0 and target_count >= counts.max():
            success = True
            hit_generation = gen
            break
        if gen == cfg.generations:
            break

        # Fitness-proportional selection by expected counts.
        total = float(fitness.sum())
        expected = cfg.pop_size * fitness / total
        counts_next = largest_remainder_counts(expected, cfg.pop_size)
        parents = np.repeat(np.arange(cfg.pop_size), counts_next)
        offspring = transmitted[parents]
        if cfg.mutation_rate > 0.0:
            mask = rng.random(offspring.shape) < cfg.mutation_rate
            offspring = offspring ^ mask
        genomes = offspring.astype(np.uint8)

    return BaldwinResult(
        success=success,
        generations_to_target=hit_generation,
        mean_hamming_trace=np.asarray(mean_h),
        best_hamming_trace=np.asarray(best_h),
        mean_fitness_trace=np.asarray(mean_fit),
    )


@dataclass(frozen=True)
class LookaheadTrace:
    """Outer iterates plus the inner trajectory of every round."""

    outer_thetas: np.ndarray
    inner_thetas: list


INNER_OPTIMIZERS = ("gd", "sgd", "adam")


def lookahead_meta(
    obj,
    inner_optimizer_id: str,
    inner_steps: int,
    alpha: float,
    outer_steps: int,
    seed: int,
    theta0,
    inner_eta: float = 0.1,
    batch_size: int = 8,
) -> LookaheadTrace:
    """Fast inner optimization, slow outer blending.

    Each round runs ``inner_steps`` of the chosen inner optimizer from
    the current outer iterate, then moves the outer iterate a fraction
    ``alpha`` of the way to the inner result.  alpha = 1 with one inner
    step degenerates to the plain inner optimizer.  Inner rounds use
    the stream default_rng([seed, round]) so runs are reproducible.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if inner_steps < 1 or outer_steps < 0:
        raise ValueError("inner_steps >= 1 and outer_steps >= 0 required")
    if inner_optimizer_id not in INNER_OPTIMIZERS:
        raise ValueError(
            f"unknown inner optimizer {inner_optimizer_id!r}; "
            f"known ids: {', '.join(INNER_OPTIMIZERS)}"
        )
    theta = np.asarray(theta0, dtype=float)
    outer = [theta]
    inners = []
    for round_index in range(int(outer_steps)):
        rng = np.random.default_rng([seed, round_index])
        state = optim.OptimizerState.initial(theta, seed=seed)
        path = [state.theta]
        for _ in range(int(inner_steps)):
            if inner_optimizer_id == "gd":
                state, _ = optim.step_gd(obj, state, inner_eta)
            elif inner_optimizer_id == "sgd":
                state, _ = optim.step_sgd(obj, state, inner_eta, batch_size, rng)
            else:
                state, _ = optim.step_adam(obj, state, inner_eta, 0.9, 0.99, 1e-8)
            path.append(state.theta)
        inners.append(np.vstack(path))
        theta = theta + alpha * (state.theta - theta)
        outer.append(theta)
    return LookaheadTrace(outer_thetas=np.vstack(outer), inner_thetas=inners)
