"""Exact Price-equation accounting over finite weighted populations.

A population is a set of m parameter vectors (rows of ``theta``), each
carrying a probability weight ``q_i`` and a relative fitness ``w_i``
normalized so the q-weighted mean fitness is one.  The change in the
q-weighted mean parameter vector splits exactly into a selection term
(frequency change) and a transmission term (value change), and the
selection/transmission pair reduces further to the sufficient statistics
metric M, force f, bias (C, beta, gamma) and residual noise xi.

All covariances are probability-weighted moments, Cov(x, y) =
sum_i q_i x_i y_i - xbar * ybar, with no sample-size correction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Singular values below RCOND * largest are treated as zero in the
# least-norm regression solves.
RCOND = 1e-10

_Q_TOL = 1e-12


def _as_matrix(x, m: int) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a.reshape(m, 1) if a.shape[0] == m else a.reshape(1, -1)
    return a


def normalize_fitness(raw, q) -> np.ndarray:
    """Rescale nonnegative performance values to relative fitness.

    Returns w proportional to ``raw`` with q-weighted mean exactly one,
    so fitness doubles as the per-variant growth factor q'_i / q_i.

    Raises
    ------
    ValueError
        If every variant with positive weight has zero performance
        ("degenerate fitness": no variant can grow).
    """
    raw = np.asarray(raw, dtype=float)
    q = np.asarray(q, dtype=float)
    if raw.shape != q.shape:
        raise ValueError("raw and q must have the same length")
    if np.any(raw < 0):
        raise ValueError("raw performance must be nonnegative")
    mean = float(q @ raw)
    if mean <= 0.0:
        raise ValueError("degenerate fitness: q-weighted performance is zero")
    return raw / mean


@dataclass(frozen=True)
class Population:
    """Finite weighted population: the substrate of the Price equation.

    Parameters
    ----------
    q : (m,) probability vector, entries >= 0 summing to one.
    theta : (m, n) parameter matrix, one variant per row.
    w : (m,) nonnegative fitness. Normalized at construction so that
        q @ w == 1; pass ``normalize=False`` only for already-normalized
        values (still validated).
    dtheta : (m, n) per-variant parameter changes, default all zero.
    """

    q: np.ndarray
    theta: np.ndarray
    w: np.ndarray
    dtheta: np.ndarray | None = None
    normalize: bool = field(default=True, repr=False)

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        m = q.shape[0]
        theta = _as_matrix(self.theta, m)
        w = np.asarray(self.w, dtype=float)
        dtheta = (
            np.zeros_like(theta)
            if self.dtheta is None
            else _as_matrix(self.dtheta, m)
        )
        if np.any(q < 0):
            raise ValueError("population weights must be nonnegative")
        if abs(q.sum() - 1.0) > _Q_TOL:
            raise ValueError("population weights must sum to one")
        if theta.shape[0] != m or w.shape[0] != m or dtheta.shape != theta.shape:
            raise ValueError("inconsistent population dimensions")
        if self.normalize:
            w = normalize_fitness(w, q)
        elif abs(float(q @ w) - 1.0) > _Q_TOL:
            raise ValueError("fitness must have q-weighted mean one")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "dtheta", dtheta)

    @property
    def size(self) -> int:
        return self.q.shape[0]

    @property
    def dim(self) -> int:
        return self.theta.shape[1]

    def mean_theta(self) -> np.ndarray:
        return self.q @ self.theta

    def updated_weights(self) -> np.ndarray:
        """q'_i = q_i * w_i, the post-selection weights (sum to one)."""
        return self.q * self.w

    def to_dict(self) -> dict:
        return {
            "q": self.q.tolist(),
            "theta": self.theta.tolist(),
            "w": self.w.tolist(),
            "dtheta": self.dtheta.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Population":
        return cls(
            q=np.asarray(data["q"], dtype=float),
            theta=np.asarray(data["theta"], dtype=float),
            w=np.asarray(data["w"], dtype=float),
            dtheta=(
                np.asarray(data["dtheta"], dtype=float)
                if data.get("dtheta") is not None
                else None
            ),
        )


@dataclass(frozen=True)
class PriceDecomposition:
    """Split of the change in mean parameters into selection + transmission."""

    delta_mean: np.ndarray
    selection_term: np.ndarray
    transmission_term: np.ndarray

    def __post_init__(self):
        resid = self.delta_mean - (self.selection_term + self.transmission_term)
        if np.max(np.abs(resid)) > 1e-12 * max(1.0, np.max(np.abs(self.delta_mean))):
            raise ValueError("selection + transmission must equal delta_mean")


@dataclass(frozen=True)
class FmbDecomposition:
    """Sufficient statistics of one update: metric, force, bias, noise.

    The reconstruction M @ f + C @ beta + gamma + xi equals the
    population's change in mean parameters.
    """

    M: np.ndarray
    f: np.ndarray
    C: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        for name in ("M", "C"):
            mat = getattr(self, name)
            if not np.allclose(mat, mat.T, atol=1e-10):
                raise ValueError(f"{name} must be symmetric")
            scale = max(1.0, float(np.max(np.abs(mat))))
            if np.linalg.eigvalsh(mat).min() < -1e-10 * scale:
                raise ValueError(f"{name} must be positive semidefinite")

    @property
    def bias(self) -> np.ndarray:
        """Total bias b = C @ beta + gamma."""
        return self.C @ self.beta + self.gamma

    def reconstruct(self) -> np.ndarray:
        return self.M @ self.f + self.C @ self.beta + self.gamma + self.xi

    def to_dict(self) -> dict:
        return {
            "M": self.M.tolist(),
            "f": self.f.tolist(),
            "C": self.C.tolist(),
            "beta": self.beta.tolist(),
            "gamma": self.gamma.tolist(),
            "xi": self.xi.tolist(),
            "bias": self.bias.tolist(),
        }


def weighted_mean(q, x) -> np.ndarray:
    """q-weighted mean of rows of x."""
    return np.asarray(q, dtype=float) @ np.asarray(x, dtype=float)


def weighted_cov_matrix(q, x) -> np.ndarray:
    """Probability-weighted covariance matrix of the columns of x."""
    return _cov_matrix(np.asarray(q, dtype=float), np.asarray(x, dtype=float))


def _cov_matrix(q, x) -> np.ndarray:
    xc = x - q @ x
    m = (q[:, None] * xc).T @ xc
    return 0.5 * (m + m.T)


def _cov_with_fitness(q, w, x) -> np.ndarray:
    # Cov(w, x) = sum q w x - wbar * xbar with wbar == 1.
    return (q * w) @ x - q @ x


def price_update(pop: Population) -> PriceDecomposition:
    """Exact change in the q-weighted mean of theta' = theta + dtheta.

    The selection term is Cov(w, theta) per coordinate, the transmission
    term is E(w * dtheta), and their sum equals the difference of means
    under the updated weights q'_i = q_i * w_i.
    """
    selection = _cov_with_fitness(pop.q, pop.w, pop.theta)
    transmission = (pop.q * pop.w) @ pop.dtheta
    return PriceDecomposition(
        delta_mean=selection + transmission,
        selection_term=selection,
        transmission_term=transmission,
    )


def _least_norm_regression(cov_xx: np.ndarray, cov_wx: np.ndarray) -> np.ndarray:
    # Least-norm solution of cov_xx @ f = cov_wx; keeps M @ f exact on
    # the variation subspace even when cov_xx is rank deficient.
    sol, *_ = np.linalg.lstsq(cov_xx, cov_wx, rcond=RCOND)
    return sol


def fmb_decompose(pop: Population) -> FmbDecomposition:
    """Extract metric, force, bias, and noise from population data.

    M is the parameter covariance and f the least-norm partial
    regression of fitness on parameters; C and beta repeat the pattern
    for the parameter changes, gamma is the mean change, and xi is the
    reconstruction residual (zero for full-rank covariances).
    """
    M = _cov_matrix(pop.q, pop.theta)
    cov_w_theta = _cov_with_fitness(pop.q, pop.w, pop.theta)
    f = _least_norm_regression(M, cov_w_theta)

    C = _cov_matrix(pop.q, pop.dtheta)
    cov_w_dtheta = _cov_with_fitness(pop.q, pop.w, pop.dtheta)
    beta = _least_norm_regression(C, cov_w_dtheta)

    gamma = pop.q @ pop.dtheta
    delta_mean = price_update(pop).delta_mean
    xi = delta_mean - (M @ f + C @ beta + gamma)
    return FmbDecomposition(M=M, f=f, C=C, beta=beta, gamma=gamma, xi=xi)


def lande_step(pop: Population) -> np.ndarray:
    """Selection response Cov(w, theta) = M @ f for a transmission-free population.

    Raises
    ------
    ValueError
        If any dtheta entry is nonzero; this operation isolates the
        frequency-change term.
    """
    if np.any(pop.dtheta != 0.0):
        raise ValueError("lande_step requires dtheta == 0")
    return _cov_with_fitness(pop.q, pop.w, pop.theta)


def expected_gain(dec: FmbDecomposition) -> float:
    """First-order expected performance gain f' M f (nonnegative)."""
    return float(dec.f @ dec.M @ dec.f)
