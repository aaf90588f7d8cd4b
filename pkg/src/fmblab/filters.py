"""Gaussian-process regression and Kalman filtering in metric-force form.

Both updates move a Gaussian belief by the product of an
inverse-curvature metric and a data-misfit force.  For the GP the
metric is the inverse of prior precision plus data precision and the
force is the noise-scaled residual at the training inputs; for the
Kalman filter the metric is the predicted covariance and the force is
the innovation pulled back through the observation map.  Textbook
gain-form updates are kept as cross-checks in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optim import StepReport


def rbf_kernel(x, x_tilde, sigma_g: float, ell: float) -> float:
    """Squared-exponential kernel sigma_g^2 exp(-||x - x~||^2 / (2 ell^2))."""
    if sigma_g <= 0 or ell <= 0:
        raise ValueError("sigma_g and ell must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_tilde = np.atleast_1d(np.asarray(x_tilde, dtype=float))
    sq = float(np.sum((x - x_tilde) ** 2))
    return float(sigma_g**2 * np.exp(-sq / (2.0 * ell**2)))


def rbf_gram(x: np.ndarray, sigma_g: float, ell: float) -> np.ndarray:
    """Gram matrix of the squared-exponential kernel over rows of x."""
    if sigma_g <= 0 or ell <= 0:
        raise ValueError("sigma_g and ell must be positive")
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    sq = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=2)
    return sigma_g**2 * np.exp(-sq / (2.0 * ell**2))


@dataclass(frozen=True)
class GpModel:
    """Training inputs, kernel hyperparameters, noise, and prior mean values."""

    inputs: np.ndarray
    sigma_g: float
    ell: float
    noise_var: float
    prior_mean: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs.reshape(-1, 1)
        prior_mean = np.asarray(self.prior_mean, dtype=float)
        if self.sigma_g <= 0 or self.ell <= 0 or self.noise_var <= 0:
            raise ValueError("kernel and noise parameters must be positive")
        if prior_mean.shape != (inputs.shape[0],):
            raise ValueError("prior_mean must give one value per training input")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "prior_mean", prior_mean)

    def gram(self) -> np.ndarray:
        return rbf_gram(self.inputs, self.sigma_g, self.ell)


@dataclass(frozen=True)
class GpUpdate:
    """Metric, force, and mean shift of one GP conditioning step."""

    delta_mean: np.ndarray
    M: np.ndarray
    f: np.ndarray
    posterior_mean: np.ndarray


def _gram_cholesky(k: np.ndarray) -> np.ndarray:
    # Cholesky with one jittered retry: RBF Gram matrices go singular
    # fast as inputs cluster.  Near-singularity (smallest eigenvalue at
    # or below the jitter scale) counts as failure too.
    n = k.shape[0]
    jitter = 1e-10 * np.trace(k) / n
    if np.linalg.eigvalsh(k)[0] <= jitter:
        k = k + jitter * np.eye(n)
    try:
        return np.linalg.cholesky(k)
    except np.linalg.LinAlgError:
        raise ValueError("kernel matrix not invertible even with jitter") from None


def gp_update(model: GpModel, y) -> GpUpdate:
    """Condition the GP on observations y at the training inputs.

    metric M = (K^-1 + I / noise_var)^-1, force f = (y - prior) / noise_var,
    and the mean moves by M @ f, which equals the textbook posterior-mean
    shift K (K + noise_var I)^-1 (y - prior).

    M is assembled from the Cholesky factor of K as
    L (I + L' L / noise_var)^-1 L', the same precision combination
    without an explicit K inverse (which sheds all its digits on
    near-singular Gram matrices).
    """
    y = np.asarray(y, dtype=float)
    if y.shape != model.prior_mean.shape:
        raise ValueError("y must give one value per training input")
    chol = _gram_cholesky(model.gram())
    n = chol.shape[0]
    inner = np.eye(n) + chol.T @ chol / model.noise_var
    metric = chol @ np.linalg.solve(inner, chol.T)
    metric = 0.5 * (metric + metric.T)
    force = (y - model.prior_mean) / model.noise_var
    delta = metric @ force
    return GpUpdate(
        delta_mean=delta,
        M=metric,
        f=force,
        posterior_mean=model.prior_mean + delta,
    )


@dataclass(frozen=True)
class FilterState:
    """Gaussian belief over the hidden state: mean and PD covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError("covariance shape must match the mean")
        if not np.allclose(cov, cov.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0.0:
            raise ValueError("covariance must be positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))


@dataclass(frozen=True)
class LinearSystem:
    """Linear-Gaussian dynamics x' = F x + noise(Q), y = H x + noise(R)."""

    dynamics: np.ndarray
    process_noise: np.ndarray
    observation: np.ndarray
    measurement_noise: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.dynamics, dtype=float)
        q = np.asarray(self.process_noise, dtype=float)
        h = np.atleast_2d(np.asarray(self.observation, dtype=float))
        r = np.asarray(self.measurement_noise, dtype=float)
        n = f.shape[0]
        if f.shape != (n, n) or q.shape != (n, n):
            raise ValueError("dynamics and process noise must be square and matching")
        k = h.shape[0]
        if h.shape[1] != n or r.shape != (k, k):
            raise ValueError("observation and measurement noise shapes inconsistent")
        if np.linalg.eigvalsh(0.5 * (q + q.T)).min() < -1e-10:
            raise ValueError("process noise must be positive semidefinite")
        if np.linalg.eigvalsh(0.5 * (r + r.T)).min() <= 0.0:
            raise ValueError("measurement noise must be positive definite")
        object.__setattr__(self, "dynamics", f)
        object.__setattr__(self, "process_noise", 0.5 * (q + q.T))
        object.__setattr__(self, "observation", h)
        object.__setattr__(self, "measurement_noise", 0.5 * (r + r.T))


def kalman_predict(state: FilterState, sys: LinearSystem) -> FilterState:
    """Propagate the belief through the dynamics: mean F x, cov F P F' + Q."""
    mean = sys.dynamics @ state.mean
    cov = sys.dynamics @ state.cov @ sys.dynamics.T + sys.process_noise
    return FilterState(mean=mean, cov=0.5 * (cov + cov.T))


def kalman_update(
    prior: FilterState, sys: LinearSystem, y
) -> tuple[FilterState, StepReport]:
    """Condition the predicted belief on one observation.

    The mean moves by metric times force: M is the predicted covariance
    and f = H' S^-1 v for innovation v and its covariance S.  The
    covariance updates in Joseph form, which preserves symmetry and
    positive definiteness unconditionally.
    """
    y = np.asarray(y, dtype=float)
    h = sys.observation
    innovation = y - h @ prior.mean
    s = h @ prior.cov @ h.T + sys.measurement_noise
    cond = np.linalg.cond(s)
    if not np.isfinite(cond) or cond > 1e14:
        raise ValueError("singular innovation covariance")
    s_inv = np.linalg.inv(s)
    force = h.T @ s_inv @ innovation
    delta = prior.cov @ force

    gain = prior.cov @ h.T @ s_inv
    shrink = np.eye(prior.mean.shape[0]) - gain @ h
    cov = shrink @ prior.cov @ shrink.T + gain @ sys.measurement_noise @ gain.T
    posterior = FilterState(mean=prior.mean + delta, cov=0.5 * (cov + cov.T))
    report = StepReport(
        delta_theta=delta,
        M_metric=prior.cov,
        f_force=force,
        b_bias=np.zeros_like(delta),
        xi_noise=np.zeros_like(delta),
        diagnostics={
            "innovation_norm": float(np.linalg.norm(innovation)),
            "s_inv_trace": float(np.trace(s_inv)),
        },
    )
    return posterior, report


@dataclass(frozen=True)
class KalmanTrace:
    """Per-step filter states (posterior after each observation) and innovations."""

    states: list
    innovation_norms: list


def kalman_run(sys: LinearSystem, init: FilterState, observations) -> KalmanTrace:
    """Fold predict/update over an observation sequence.

    The trace starts with the initial state; an empty sequence returns
    just that.
    """
    states = [init]
    norms: list[float] = []
    state = init
    for y in observations:
        predicted = kalman_predict(state, sys)
        state, report = kalman_update(predicted, sys, y)
        states.append(state)
        norms.append(report.diagnostics["innovation_norm"])
    return KalmanTrace(states=states, innovation_norms=norms)
