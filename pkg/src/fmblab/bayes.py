"""Discrete Bayesian updating, the evidence lower bound, and variational fits.

Works on a finite grid of support points: a prior probability vector, a
log-likelihood value per point, and (optionally) the parameter value of
each point.  Bayesian updating is the same growth-factor update as
selection, with the normalized likelihood playing the fitness role.
The evidence lower bound (ELBO) of a candidate posterior splits into a
direct data term and an inertial prior-divergence term, and a mean-field
softmax family can be fit by gradient ascent with backtracking.

All evidence computations run in log space with max subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .infogeo import kl

_Q_TOL = 1e-12


def _logsumexp(a: np.ndarray) -> float:
    hi = np.max(a)
    if not np.isfinite(hi):
        return float(hi)
    return float(hi + np.log(np.sum(np.exp(a - hi))))


@dataclass(frozen=True)
class DiscreteModel:
    """Prior weights, log likelihoods, and parameter values on a finite grid."""

    prior: np.ndarray
    loglik: np.ndarray
    grid: np.ndarray | None = None

    def __post_init__(self):
        prior = np.asarray(self.prior, dtype=float)
        loglik = np.asarray(self.loglik, dtype=float)
        if np.any(prior < 0) or abs(prior.sum() - 1.0) > _Q_TOL:
            raise ValueError("prior must be a probability vector")
        if loglik.shape != prior.shape or not np.all(np.isfinite(loglik)):
            raise ValueError("loglik must be finite and match the prior length")
        grid = self.grid
        if grid is not None:
            grid = np.asarray(grid, dtype=float)
            if grid.ndim == 1:
                grid = grid.reshape(-1, 1)
            if grid.shape[0] != prior.shape[0]:
                raise ValueError("grid rows must match the prior length")
        if not np.any(prior > 0):
            raise ValueError("prior has no support")
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "loglik", loglik)
        object.__setattr__(self, "grid", grid)

    @property
    def size(self) -> int:
        return self.prior.shape[0]


def log_evidence(model: DiscreteModel) -> float:
    """log sum_i q_i exp(loglik_i), computed in log space."""
    live = model.prior > 0.0
    value = _logsumexp(np.log(model.prior[live]) + model.loglik[live])
    if not np.isfinite(value):
        raise ValueError("evidence underflow: no support point has finite mass")
    return value


def bayes_update(model: DiscreteModel) -> tuple[np.ndarray, np.ndarray]:
    """Posterior q'_i proportional to q_i exp(loglik_i), plus the normalized likelihood.

    The normalized likelihood L = posterior / prior (growth factor) has
    q-weighted mean one, so it plugs directly into the selection
    machinery as a relative fitness.
    """
    log_z = log_evidence(model)
    posterior = np.zeros_like(model.prior)
    live = model.prior > 0.0
    posterior[live] = np.exp(np.log(model.prior[live]) + model.loglik[live] - log_z)
    posterior /= posterior.sum()
    normalized_l = np.zeros_like(posterior)
    normalized_l[live] = posterior[live] / model.prior[live]
    return posterior, normalized_l


def partial_likelihood_gain(model: DiscreteModel) -> float:
    """Direct gain dq . L of the Bayes update: the squared Fisher-Rao length."""
    posterior, normalized_l = bayes_update(model)
    return float((posterior - model.prior) @ normalized_l)


@dataclass(frozen=True)
class ElboReport:
    """ELBO of a candidate posterior plus its force decomposition.

    Satisfies elbo + kl_to_true == log_evidence; the two sides are
    computed by independent paths and cross-checked at construction.
    """

    elbo: float
    direct_term: float
    inertial_term: float
    log_evidence: float
    kl_to_true: float

    def __post_init__(self):
        gap = abs(self.elbo + self.kl_to_true - self.log_evidence)
        if gap > 1e-10 * max(1.0, abs(self.log_evidence)):
            raise ValueError("elbo + kl_to_true must equal log evidence")


def _check_support(model: DiscreteModel, qhat: np.ndarray) -> None:
    if np.any((qhat > 0.0) & (model.prior == 0.0)):
        raise ValueError("candidate posterior has mass outside the prior support")


def elbo(model: DiscreteModel, qhat) -> ElboReport:
    """Evidence lower bound of a candidate posterior qhat.

    elbo = E_qhat(loglik) - KL(qhat || prior).  The report also carries
    the direct term dq . loglik, the inertial term -KL(qhat || prior),
    the log evidence, and the divergence from the true posterior.
    """
    qhat = np.asarray(qhat, dtype=float)
    if np.any(qhat < 0) or abs(qhat.sum() - 1.0) > 1e-9:
        raise ValueError("qhat must be a probability vector")
    _check_support(model, qhat)
    posterior, _ = bayes_update(model)
    complexity = kl(qhat, model.prior)
    value = float(qhat @ model.loglik) - complexity
    return ElboReport(
        elbo=value,
        direct_term=float((qhat - model.prior) @ model.loglik),
        inertial_term=-complexity,
        log_evidence=log_evidence(model),
        kl_to_true=kl(qhat, posterior),
    )


def elbo_delta_price(model: DiscreteModel, qhat) -> tuple[float, float]:
    """Split of the ELBO change from prior to qhat into direct and inertial parts.

    direct = (qhat - prior) . loglik, inertial = -KL(qhat || prior);
    their sum is elbo(qhat) - elbo(prior).
    """
    report = elbo(model, qhat)
    return report.direct_term, report.inertial_term


def free_energy_delta(model: DiscreteModel, qhat) -> float:
    """Complexity-minus-accuracy change KL(qhat || prior) - dq . loglik."""
    direct, inertial = elbo_delta_price(model, qhat)
    return -(direct + inertial)


@dataclass(frozen=True)
class MeanFieldFamily:
    """Mean-field product of softmax categoricals over factored coordinates.

    ``factors`` gives the number of levels of each independent
    coordinate; their product must equal the model's support size, with
    support points enumerated in row-major (last factor fastest) order.
    The unconstrained parameter phi concatenates one logit block per
    factor, so every finite phi maps to a strictly positive candidate
    posterior.
    """

    factors: tuple[int, ...]

    def __post_init__(self):
        if not self.factors or any(k < 1 for k in self.factors):
            raise ValueError("factors must be positive")
        object.__setattr__(self, "factors", tuple(int(k) for k in self.factors))

    @property
    def size(self) -> int:
        return int(np.prod(self.factors))

    @property
    def n_params(self) -> int:
        return int(sum(self.factors))

    def init_phi(self) -> np.ndarray:
        return np.zeros(self.n_params)

    def split(self, phi: np.ndarray) -> list[np.ndarray]:
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.n_params,):
            raise ValueError("phi has the wrong length")
        out, start = [], 0
        for k in self.factors:
            out.append(phi[start : start + k])
            start += k
        return out

    def marginals(self, phi: np.ndarray) -> list[np.ndarray]:
        probs = []
        for block in self.split(phi):
            z = block - block.max()
            e = np.exp(z)
            probs.append(e / e.sum())
        return probs

    def q_hat(self, phi: np.ndarray) -> np.ndarray:
        """Flat candidate posterior over the full support grid."""
        probs = self.marginals(phi)
        joint = probs[0]
        for p in probs[1:]:
            joint = np.multiply.outer(joint, p)
        return joint.reshape(-1)


def _family_signal(model: DiscreteModel, family: MeanFieldFamily, phi: np.ndarray):
    # Pointwise force nu - log qhat with nu = loglik + log prior: the
    # direct force of the data minus the inertial pull of the prior.
    # qhat is floored before the log so that underflowed softmax cells
    # (weight ~0) cannot poison the weighted sums.
    if np.any(model.prior == 0.0):
        raise ValueError("mean-field family requires full prior support")
    qhat = family.q_hat(phi)
    signal = model.loglik + np.log(model.prior) - np.log(np.maximum(qhat, 1e-300))
    return qhat, signal


def _elbo_value(model: DiscreteModel, qhat: np.ndarray) -> float:
    safe = np.log(np.maximum(qhat, 1e-300))
    return float(qhat @ (model.loglik + np.log(model.prior) - safe))


def elbo_gradient(model: DiscreteModel, family: MeanFieldFamily, phi) -> np.ndarray:
    """Analytic ELBO gradient with respect to the softmax logits."""
    phi = np.asarray(phi, dtype=float)
    qhat, signal = _family_signal(model, family, phi)
    weighted = (qhat * signal).reshape(family.factors)
    total = float(weighted.sum())
    marg = family.marginals(phi)
    blocks = []
    for axis, p in enumerate(marg):
        other = tuple(a for a in range(len(family.factors)) if a != axis)
        cond = weighted.sum(axis=other)
        blocks.append(cond - p * total)
    return np.concatenate(blocks)


def _conditional_signal(model: DiscreteModel, family: MeanFieldFamily, phi):
    # Per factor level: conditional mean of the net force minus its
    # overall mean.  This equals the phi-gradient rescaled by the
    # inverse marginals, and vanishes exactly at a variational optimum.
    qhat, signal = _family_signal(model, family, phi)
    weighted = (qhat * signal).reshape(family.factors)
    total = float(weighted.sum())
    marg = family.marginals(phi)
    blocks = []
    for axis, p in enumerate(marg):
        other = tuple(a for a in range(len(family.factors)) if a != axis)
        cond = weighted.sum(axis=other) / p
        blocks.append(cond - total)
    return blocks


def statics_residual(model: DiscreteModel, family: MeanFieldFamily, phi) -> float:
    """Worst imbalance of direct vs inertial force along allowable directions.

    For each factor level, compares the conditional mean of the net
    force to its overall mean; at a variational optimum the net force
    is level-independent and the residual vanishes.
    """
    blocks = _conditional_signal(model, family, np.asarray(phi, dtype=float))
    return max(float(np.max(np.abs(b))) for b in blocks)


def variational_fit(
    model: DiscreteModel,
    family: MeanFieldFamily,
    steps: int,
    rate: float,
    tol: float = 1e-6,
    phi0=None,
) -> tuple[np.ndarray, list[ElboReport]]:
    """Fit the mean-field family by ascent on the ELBO.

    The ascent direction is the analytic phi-gradient preconditioned by
    the inverse factor marginals (the conditional-mean force signal);
    raw logit gradients scale with the marginals and crawl on
    low-probability levels.  Each step backtracks (halving the rate)
    until the ELBO does not decrease, so the trace of reports is
    non-decreasing in elbo.  Stops early once the statics residual
    drops below ``tol``: at that point the direct force of the data and
    the inertial force of the prior balance along every allowable
    direction of the family.

    Returns the final phi and one ElboReport per accepted iterate,
    including the initial one.
    """
    if family.size != model.size:
        raise ValueError(
            "family factorization does not match the model support: "
            f"prod(factors) = {family.size}, support = {model.size}"
        )
    if np.any(model.prior == 0.0):
        raise ValueError("mean-field fit requires full prior support")
    phi = family.init_phi() if phi0 is None else np.asarray(phi0, dtype=float).copy()
    trace = [elbo(model, family.q_hat(phi))]
    for _ in range(int(steps)):
        blocks = _conditional_signal(model, family, phi)
        if max(float(np.max(np.abs(b))) for b in blocks) < tol:
            break
        direction = np.concatenate([b.reshape(-1) for b in blocks])
        current = trace[-1].elbo
        step = float(rate)
        value = -np.inf
        candidate = phi
        while step > 1e-18:
            candidate = phi + step * direction
            value = _elbo_value(model, family.q_hat(candidate))
            if value >= current:
                break
            step /= 2.0
        if value < current:
            break
        phi = candidate
        trace.append(elbo(model, family.q_hat(phi)))
    return phi, trace
