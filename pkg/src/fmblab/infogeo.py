"""Divergences between probability vectors and the discrete conservation check.

Measures the separation between an initial distribution q and an
updated distribution q': the discrete squared Fisher-Rao step length,
KL and Jeffreys divergences, the square-root (unit sphere) embedding,
and the conserved direct-plus-inertial balance that follows from
keeping total probability fixed.  All logarithms are natural;
divergences are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_Q_TOL = 1e-12


def _validate_prob(q, name: str) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if np.any(q < 0):
        raise ValueError(f"{name} must be nonnegative")
    if abs(q.sum() - 1.0) > _Q_TOL:
        raise ValueError(f"{name} must sum to one")
    return q


@dataclass(frozen=True)
class DistributionPair:
    """An initial distribution q and its update q_prime on shared support."""

    q: np.ndarray
    q_prime: np.ndarray

    def __post_init__(self):
        q = _validate_prob(self.q, "q")
        qp = _validate_prob(self.q_prime, "q_prime")
        if q.shape != qp.shape:
            raise ValueError("q and q_prime must have the same length")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "q_prime", qp)

    @property
    def delta(self) -> np.ndarray:
        return self.q_prime - self.q


def _require_no_mass_creation(pair: DistributionPair) -> None:
    if np.any((pair.q == 0.0) & (pair.q_prime != pair.q)):
        raise ValueError("unsupported mass creation: q_i = 0 with q'_i > 0")


def fisher_rao_sq(pair: DistributionPair) -> float:
    """Discrete squared Fisher-Rao step length sum((dq)^2 / q).

    Equals the variance of the growth factors w = q'/q under q.
    """
    _require_no_mass_creation(pair)
    live = pair.q > 0.0
    dq = pair.delta[live]
    return float(np.sum(dq * dq / pair.q[live]))


def kl(p, r) -> float:
    """Kullback-Leibler divergence KL(p || r) in nats.

    Terms with p_i = 0 contribute zero; p_i > 0 where r_i = 0 raises.
    """
    p = _validate_prob(p, "p")
    r = _validate_prob(r, "r")
    if p.shape != r.shape:
        raise ValueError("p and r must have the same length")
    live = p > 0.0
    if np.any(r[live] == 0.0):
        raise ValueError("infinite divergence: p has mass where r has none")
    return float(np.sum(p[live] * np.log(p[live] / r[live])))


def jeffreys(pair: DistributionPair) -> float:
    """Symmetrized KL divergence KL(q'||q) + KL(q||q').

    Also equal to dq . m for the log growth rates m = log(q'/q).
    """
    return kl(pair.q_prime, pair.q) + kl(pair.q, pair.q_prime)


def sqrt_embed(q) -> np.ndarray:
    """Elementwise square root of q: a point on the unit sphere."""
    return np.sqrt(_validate_prob(q, "q"))


def fisher_rao_sphere_sq(pair: DistributionPair) -> float:
    """Squared chord length 4 * ||sqrt(q') - sqrt(q)||^2 on the sphere.

    Converges to fisher_rao_sq as the step shrinks.
    """
    dr = sqrt_embed(pair.q_prime) - sqrt_embed(pair.q)
    return float(4.0 * dr @ dr)


def dalembert_residual(pair: DistributionPair) -> float:
    """Direct plus inertial virtual work for the normalized growth factor.

    With L = q'/q and the post-update convention L' = 1, returns
    dq . L + q' . dL.  Conservation of total probability makes this
    identically zero: the direct gain dq . L (the squared Fisher-Rao
    length) is cancelled exactly by the inertial term.
    """
    _require_no_mass_creation(pair)
    live = pair.q > 0.0
    growth = pair.q_prime[live] / pair.q[live]
    direct = float(pair.delta[live] @ growth)
    inertial = float(pair.q_prime[live] @ (1.0 - growth))
    return direct + inertial
