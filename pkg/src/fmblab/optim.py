"""Single-vector optimizers that report every step in metric-force-bias form.

Each ``step_*`` function takes an objective (maximization convention), an
immutable optimizer state, and hyperparameters, and returns the updated
state together with a StepReport whose parts reconstruct the step:
delta_theta = M @ f + b + xi.  The metric M is the implicit or explicit
inverse-curvature rescaling, f the gradient force, b the bias (momentum,
regularization pull, geometry corrections), and xi the realized noise.

Cost minimization is handled by negating the objective at the harness
level; every formula here climbs the performance surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Eigenvalues of a repaired metric are floored at EIG_FLOOR times the
# largest eigenvalue.
EIG_FLOOR = 1e-8


class Objective:
    """Performance function U(theta) to maximize.

    Subclasses set ``dim`` and implement ``value`` and ``gradient``;
    ``hessian`` and ``batch_gradient`` are optional.  Objectives backed
    by a finite dataset also set ``data_size``.
    """

    dim: int
    data_size: int | None = None

    def value(self, theta) -> float:
        raise NotImplementedError

    def gradient(self, theta) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, theta) -> np.ndarray:
        raise NotImplementedError("objective does not provide a Hessian")

    def batch_gradient(self, theta, batch_seed: int, batch_size: int) -> np.ndarray:
        raise NotImplementedError("objective does not provide batch gradients")


def gradient_fd_error(obj: Objective, theta, h: float = 1e-6) -> float:
    """Max relative error of the analytic gradient vs central differences."""
    theta = np.asarray(theta, dtype=float)
    grad = obj.gradient(theta)
    num = np.empty_like(grad)
    for j in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[j] = h
        num[j] = (obj.value(theta + e) - obj.value(theta - e)) / (2.0 * h)
    scale = max(1.0, float(np.max(np.abs(grad))))
    return float(np.max(np.abs(grad - num)) / scale)


def hessian_fd_error(obj: Objective, theta, h: float = 1e-6) -> float:
    """Max relative error of the analytic Hessian vs gradient differences."""
    theta = np.asarray(theta, dtype=float)
    hess = obj.hessian(theta)
    n = theta.shape[0]
    num = np.empty((n, n))
    for j in range(n):
        e = np.zeros_like(theta)
        e[j] = h
        num[:, j] = (obj.gradient(theta + e) - obj.gradient(theta - e)) / (2.0 * h)
    scale = max(1.0, float(np.max(np.abs(hess))))
    return float(np.max(np.abs(hess - num)) / scale)


def repair_to_pd(mat: np.ndarray) -> np.ndarray:
    """Clamp the spectrum of a symmetric matrix to make it positive definite.

    Eigenvalues below EIG_FLOOR times the largest are raised to that
    floor, preserving eigenvectors.

    Raises
    ------
    ValueError
        "non-concave locus" when no eigenvalue is positive, so no
        meaningful ascent metric exists.
    """
    sym = 0.5 * (mat + mat.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    top = float(eigvals[-1])
    if top <= 0.0:
        raise ValueError("non-concave locus: curvature has no ascent direction")
    clamped = np.maximum(eigvals, EIG_FLOOR * top)
    return (eigvecs * clamped) @ eigvecs.T


def pd_inverse(mat: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric matrix after PD repair."""
    sym = 0.5 * (mat + mat.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    top = float(eigvals[-1])
    if top <= 0.0:
        raise ValueError("non-concave locus: curvature has no ascent direction")
    clamped = np.maximum(eigvals, EIG_FLOOR * top)
    return (eigvecs / clamped) @ eigvecs.T


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root (negative eigenvalues clipped to zero)."""
    sym = 0.5 * (mat + mat.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    root = np.sqrt(np.clip(eigvals, 0.0, None))
    return (eigvecs * root) @ eigvecs.T


@dataclass(frozen=True)
class OptimizerState:
    """Immutable per-optimizer bookkeeping carried between steps."""

    theta: np.ndarray
    momentum: np.ndarray
    second_moment: np.ndarray
    inv_hessian: np.ndarray
    step_index: int = 0
    rng_seed: int = 0
    prev_theta: np.ndarray | None = None
    prev_grad: np.ndarray | None = None

    @classmethod
    def initial(cls, theta, seed: int = 0) -> "OptimizerState":
        theta = np.asarray(theta, dtype=float)
        n = theta.shape[0]
        return cls(
            theta=theta,
            momentum=np.zeros(n),
            second_moment=np.zeros(n),
            inv_hessian=np.eye(n),
            step_index=0,
            rng_seed=int(seed),
        )


@dataclass(frozen=True)
class StepReport:
    """One update expressed as metric x force + bias + noise."""

    delta_theta: np.ndarray
    M_metric: np.ndarray
    f_force: np.ndarray
    b_bias: np.ndarray
    xi_noise: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        resid = abs(self.delta_theta - self.reconstruct()).max()
        scale = abs(self.delta_theta).max() if self.delta_theta.size else 0.0
        if resid > 1e-10 * (scale if scale > 1.0 else 1.0):
            raise ValueError("step report does not reconstruct delta_theta")

    def reconstruct(self) -> np.ndarray:
        return self.M_metric @ self.f_force + self.b_bias + self.xi_noise

    def predicted_gain(self) -> float:
        return float(self.f_force @ self.M_metric @ self.f_force)


def _checked_gradient(obj: Objective, theta: np.ndarray) -> np.ndarray:
    g = np.asarray(obj.gradient(theta), dtype=float)
    if not np.isfinite(g).all():
        raise ValueError("non-finite gradient")
    return g


def _advance(state: OptimizerState, delta: np.ndarray, **extra) -> OptimizerState:
    # Direct construction: dataclasses.replace is measurably slower on
    # the hot sampling paths.
    kwargs = {
        "theta": state.theta + delta,
        "momentum": state.momentum,
        "second_moment": state.second_moment,
        "inv_hessian": state.inv_hessian,
        "step_index": state.step_index + 1,
        "rng_seed": state.rng_seed,
        "prev_theta": state.prev_theta,
        "prev_grad": state.prev_grad,
    }
    kwargs.update(extra)
    return OptimizerState(**kwargs)


def _report(delta, metric, force, bias=None, noise=None, **diag) -> StepReport:
    n = delta.shape[0]
    return StepReport(
        delta_theta=delta,
        M_metric=metric,
        f_force=force,
        b_bias=np.zeros(n) if bias is None else bias,
        xi_noise=np.zeros(n) if noise is None else noise,
        diagnostics=diag,
    )


def step_gd(obj: Objective, state: OptimizerState, eta: float):
    """Plain gradient ascent: constant Euclidean metric eta * I."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    g = _checked_gradient(obj, state.theta)
    delta = eta * g
    report = _report(delta, eta * np.eye(g.shape[0]), g)
    return _advance(state, delta), report


def step_regularized(obj: Objective, state: OptimizerState, eta: float, lam: float):
    """Gradient ascent with a pull toward the origin prior.

    delta = eta * (grad - lam * theta); the pull is a pure bias term
    gamma = -eta * lam * theta, independent of performance.
    """
    if eta <= 0 or lam < 0:
        raise ValueError("eta must be positive and lambda nonnegative")
    g = _checked_gradient(obj, state.theta)
    bias = -eta * lam * state.theta
    delta = eta * g + bias
    report = _report(delta, eta * np.eye(g.shape[0]), g, bias=bias)
    return _advance(state, delta), report


def step_newton(obj: Objective, state: OptimizerState):
    """Full Newton ascent step: metric is the repaired inverse of -Hessian."""
    g = _checked_gradient(obj, state.theta)
    metric = pd_inverse(-np.asarray(obj.hessian(state.theta), dtype=float))
    delta = metric @ g
    report = _report(delta, metric, g)
    return _advance(state, delta), report


def step_natural_gradient(
    obj: Objective,
    state: OptimizerState,
    eta: float,
    boltzmann_b: float,
    n_samples: int,
    proposal_scale: float,
    rng: np.random.Generator,
):
    """Ascent under the inverse of an averaged-curvature information matrix.

    The curvature matrix G = -E[H(theta')] is averaged over parameter
    vectors weighted by exp(b * U(theta')), estimated by self-normalized
    importance sampling from a Gaussian proposal centered at the current
    point.  Stronger b concentrates the average on the best-performing
    region.  Diagnostics include the effective sample size.
    """
    if eta <= 0 or boltzmann_b <= 0 or n_samples < 1 or proposal_scale <= 0:
        raise ValueError("invalid natural-gradient hyperparameters")
    theta = state.theta
    n = theta.shape[0]
    g = _checked_gradient(obj, theta)

    draws = theta + proposal_scale * rng.standard_normal((int(n_samples), n))
    values = np.array([obj.value(x) for x in draws])
    # log importance weight: b*U minus the proposal log-density
    # (constants cancel under self-normalization).
    sq = np.sum((draws - theta) ** 2, axis=1)
    logw = boltzmann_b * values + sq / (2.0 * proposal_scale**2)
    logw -= logw.max()
    weights = np.exp(logw)
    weights /= weights.sum()

    ess = 1.0 / float(weights @ weights)
    if ess < min(5.0, float(n_samples)) - 1e-9:
        raise ValueError("degenerate importance weights")

    fisher = np.zeros((n, n))
    for wgt, x in zip(weights, draws):
        fisher -= wgt * np.asarray(obj.hessian(x), dtype=float)
    metric = eta * pd_inverse(fisher)
    delta = metric @ g
    report = _report(delta, metric, g, effective_sample_size=ess)
    return _advance(state, delta), report


def step_bfgs(obj: Objective, state: OptimizerState, eta: float):
    """Quasi-Newton ascent with a running inverse-curvature estimate.

    Refreshes the estimate from the latest (parameter change, gradient
    change) pair before stepping; the update is skipped when the
    curvature condition fails.  The first step (identity estimate)
    coincides with plain gradient ascent.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    theta = state.theta
    g = _checked_gradient(obj, theta)
    B = state.inv_hessian
    if state.prev_grad is not None and state.prev_theta is not None:
        s = theta - state.prev_theta
        # Cost-convention curvature pair: y is the change of the descent
        # gradient, -(g_t - g_{t-1}).
        y = state.prev_grad - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            rho = 1.0 / sy
            eye = np.eye(theta.shape[0])
            left = eye - rho * np.outer(s, y)
            B = left @ B @ left.T + rho * np.outer(s, s)
            B = 0.5 * (B + B.T)
    delta = eta * (B @ g)
    report = _report(delta, eta * B, g)
    new_state = _advance(
        state, delta, inv_hessian=B, prev_theta=theta, prev_grad=g
    )
    return new_state, report


MIRROR_POTENTIALS = ("euclidean", "entropy")


def step_mirror(obj: Objective, state: OptimizerState, eta: float, potential_id: str):
    """Mirror ascent: Newton-like step in a chosen dual geometry.

    ``euclidean`` (phi = ||theta||^2 / 2) reproduces plain gradient
    ascent exactly.  ``entropy`` (negative entropy on the simplex) uses
    the closed-form dual map, the multiplicative-weights update
    theta'_i proportional to theta_i * exp(eta * g_i).  The report's
    metric term is the first-order form of the step; the higher-order
    remainder of the exact dual map (O(eta^2)) is carried as bias, and
    its norm is recorded as the ``first_order_gap`` diagnostic.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if potential_id not in MIRROR_POTENTIALS:
        raise ValueError(f"unknown potential {potential_id!r}; known: {MIRROR_POTENTIALS}")
    theta = state.theta
    g = _checked_gradient(obj, theta)
    if potential_id == "euclidean":
        metric = eta * np.eye(theta.shape[0])
        delta = eta * g
        report = _report(delta, metric, g, first_order_gap=0.0)
        return _advance(state, delta), report

    if np.any(theta <= 0.0) or abs(float(theta.sum()) - 1.0) > 1e-9:
        raise ValueError("theta outside potential domain (simplex interior)")
    # Tangent-space inverse Hessian of the entropy potential on the
    # simplex: the categorical covariance diag(theta) - theta theta'.
    metric = eta * (np.diag(theta) - np.outer(theta, theta))
    first_order = metric @ g
    scaled = theta * np.exp(eta * (g - g.max()))
    exact_new = scaled / scaled.sum()
    delta = exact_new - theta
    bias = delta - first_order
    report = _report(
        delta, metric, g, bias=bias, first_order_gap=float(np.linalg.norm(bias))
    )
    return _advance(state, delta), report


def step_polyak(obj: Objective, state: OptimizerState, eta: float, u: float):
    """Gradient ascent with heavy-ball momentum.

    The force term keeps only the fresh gradient (metric
    eta * (1 - u) * I); the exponential moving average of past
    gradients enters as the bias gamma = eta * u * m_{t-1}.
    """
    if eta <= 0 or not 0.0 <= u < 1.0:
        raise ValueError("require eta > 0 and 0 <= u < 1")
    g = _checked_gradient(obj, state.theta)
    momentum = (1.0 - u) * g + u * state.momentum
    bias = eta * u * state.momentum
    delta = eta * momentum
    report = _report(delta, eta * (1.0 - u) * np.eye(g.shape[0]), g, bias=bias)
    return _advance(state, delta, momentum=momentum), report


def step_adam(
    obj: Objective,
    state: OptimizerState,
    eta: float,
    u: float,
    s: float,
    c: float,
    bias_corrected: bool = False,
):
    """Momentum plus an adaptive diagonal metric from squared gradients.

    Default form: metric M = eta / (sqrt(v_t) + c) per coordinate,
    force f = g_t, and momentum bias C beta with C = M and
    beta = u * m_{t-1} / (1 - u), so the whole step is
    M @ m_t / (1 - u).  With ``bias_corrected`` the standard
    warm-up-corrected moments are used and the decomposition is
    rescaled accordingly.
    """
    if eta <= 0 or not 0.0 <= u < 1.0 or not 0.0 <= s < 1.0 or c <= 0:
        raise ValueError("invalid adam hyperparameters")
    g = _checked_gradient(obj, state.theta)
    momentum = (1.0 - u) * g + u * state.momentum
    second = (1.0 - s) * g * g + s * state.second_moment
    if not bias_corrected:
        denom = np.sqrt(second) + c
        metric = eta * np.diag(1.0 / denom)
        beta = u * state.momentum / (1.0 - u)
        delta = metric @ (g + beta)
        bias = metric @ beta
    else:
        t = state.step_index + 1
        m_hat = momentum / (1.0 - u**t)
        v_hat = second / (1.0 - s**t)
        denom = np.sqrt(v_hat) + c
        metric = (eta * (1.0 - u) / (1.0 - u**t)) * np.diag(1.0 / denom)
        scale = eta / (1.0 - u**t)
        bias = scale * (u * state.momentum) / denom
        delta = eta * m_hat / denom
    report = _report(delta, metric, g, bias=bias)
    return _advance(state, delta, momentum=momentum, second_moment=second), report


SGLD_METRIC_MODES = ("identity", "inverse_hessian")


def step_sgld(
    obj: Objective,
    state: OptimizerState,
    eta: float,
    metric_mode: str,
    rng: np.random.Generator,
    eps=None,
):
    """Langevin ascent: drift eta * M * grad plus sqrt(2 * eta * M) noise.

    The injected noise has covariance D = 2 * eta * M, so the chain
    samples from exp(U) under the identity metric as eta shrinks.
    ``eps`` overrides the standard-normal draw (testing hook).
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if metric_mode not in SGLD_METRIC_MODES:
        raise ValueError(f"unknown metric mode {metric_mode!r}; known: {SGLD_METRIC_MODES}")
    theta = state.theta
    n = theta.shape[0]
    g = _checked_gradient(obj, theta)
    if eps is None:
        eps = rng.standard_normal(n)
    else:
        eps = np.asarray(eps, dtype=float)
    if metric_mode == "identity":
        metric = eta * np.eye(n)
        drift = eta * g
        noise = np.sqrt(2.0 * eta) * eps
        cov_trace = 2.0 * eta * n
    else:
        inv_curv = pd_inverse(-np.asarray(obj.hessian(theta), dtype=float))
        metric = eta * inv_curv
        drift = metric @ g
        noise = psd_sqrt(2.0 * metric) @ eps
        cov_trace = float(2.0 * np.trace(metric))
    delta = drift + noise
    report = _report(delta, metric, g, noise=noise, noise_cov_trace=cov_trace)
    return _advance(state, delta), report


def step_sgd(
    obj: Objective,
    state: OptimizerState,
    eta: float,
    batch_size: int,
    rng: np.random.Generator,
):
    """Gradient ascent on a mini-batch gradient estimate.

    The report's force is the full-data gradient (cheap for the bundled
    objectives) and the sampling error eta * (ghat - g) lands in the
    noise term, whose variance shrinks as 1 / batch_size.  Batch sizes
    beyond the dataset are clamped, flagged in the diagnostics.
    """
    if eta <= 0 or batch_size < 1:
        raise ValueError("require eta > 0 and batch_size >= 1")
    theta = state.theta
    clamped = 0.0
    if obj.data_size is not None and batch_size > obj.data_size:
        batch_size = obj.data_size
        clamped = 1.0
    batch_seed = int(rng.integers(0, 2**63 - 1))
    ghat = np.asarray(obj.batch_gradient(theta, batch_seed, int(batch_size)), dtype=float)
    if not np.all(np.isfinite(ghat)):
        raise ValueError("non-finite batch gradient")
    delta = eta * ghat
    try:
        g = _checked_gradient(obj, theta)
        noise = eta * (ghat - g)
        flag = 0.0
    except NotImplementedError:
        g = ghat
        noise = np.zeros_like(ghat)
        flag = 1.0
    report = _report(
        delta,
        eta * np.eye(theta.shape[0]),
        g,
        noise=noise,
        batch_clamped=clamped,
        force_is_estimate=flag,
        batch_seed=float(batch_seed),
    )
    return _advance(state, delta), report
