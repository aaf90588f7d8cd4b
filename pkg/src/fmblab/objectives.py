"""Bundled test objectives, all in maximization convention.

Every objective provides an analytic gradient (validated against finite
differences in the test suite and by the ``verify`` command); most also
provide an analytic Hessian, and the synthetic regression objective
exposes seeded mini-batch gradients.
"""

from __future__ import annotations

import numpy as np

from .optim import Objective


class QuadraticObjective(Objective):
    """Concave quadratic U = -theta' A theta / 2 + c' theta with A sym PD."""

    def __init__(self, a, c):
        a = np.asarray(a, dtype=float)
        c = np.asarray(c, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or c.shape != (a.shape[0],):
            raise ValueError("quadratic needs square A and matching c")
        if not np.allclose(a, a.T):
            raise ValueError("quadratic A must be symmetric")
        if np.linalg.eigvalsh(a).min() <= 0:
            raise ValueError("quadratic A must be positive definite")
        self.a = a
        self.c = c
        self.dim = c.shape[0]

    def value(self, theta):
        theta = np.asarray(theta, dtype=float)
        return float(-0.5 * theta @ self.a @ theta + self.c @ theta)

    def gradient(self, theta):
        return self.c - self.a @ np.asarray(theta, dtype=float)

    def hessian(self, theta):
        return -self.a

    def argmax(self) -> np.ndarray:
        return np.linalg.solve(self.a, self.c)


class NegRosenbrock(Objective):
    """Negated Rosenbrock valley; the maximum sits at the all-ones vector."""

    def __init__(self, n: int = 2):
        if n < 2:
            raise ValueError("rosenbrock needs n >= 2")
        self.dim = int(n)

    def value(self, theta):
        t = np.asarray(theta, dtype=float)
        head, tail = t[:-1], t[1:]
        return float(-np.sum(100.0 * (tail - head**2) ** 2 + (1.0 - head) ** 2))

    def gradient(self, theta):
        t = np.asarray(theta, dtype=float)
        g = np.zeros_like(t)
        head, tail = t[:-1], t[1:]
        # d/d(head) and d/d(tail) of the valley terms, negated for ascent.
        g[:-1] += 400.0 * head * (tail - head**2) + 2.0 * (1.0 - head)
        g[1:] += -200.0 * (tail - head**2)
        return g

    def hessian(self, theta):
        t = np.asarray(theta, dtype=float)
        n = t.shape[0]
        h = np.zeros((n, n))
        for i in range(n - 1):
            h[i, i] += -1200.0 * t[i] ** 2 + 400.0 * t[i + 1] - 2.0
            h[i + 1, i + 1] += -200.0
            h[i, i + 1] += 400.0 * t[i]
            h[i + 1, i] += 400.0 * t[i]
        return h

    def argmax(self) -> np.ndarray:
        return np.ones(self.dim)


class TwoBumps(Objective):
    """Sum of two Gaussian bumps: a smooth multi-basin surface."""

    def __init__(self, centers, widths, heights=(1.0, 0.6)):
        centers = np.atleast_2d(np.asarray(centers, dtype=float))
        widths = np.asarray(widths, dtype=float)
        heights = np.asarray(heights, dtype=float)
        if centers.shape[0] != 2 or widths.shape != (2,) or heights.shape != (2,):
            raise ValueError("two_bumps needs two centers, widths, and heights")
        if np.any(widths <= 0):
            raise ValueError("bump widths must be positive")
        self.centers = centers
        self.widths = widths
        self.heights = heights
        self.dim = centers.shape[1]

    def _bumps(self, theta):
        theta = np.asarray(theta, dtype=float)
        diffs = theta - self.centers
        sq = np.sum(diffs**2, axis=1)
        return diffs, self.heights * np.exp(-sq / (2.0 * self.widths**2))

    def value(self, theta):
        _, bumps = self._bumps(theta)
        return float(bumps.sum())

    def gradient(self, theta):
        diffs, bumps = self._bumps(theta)
        return -np.sum((bumps / self.widths**2)[:, None] * diffs, axis=0)

    def hessian(self, theta):
        diffs, bumps = self._bumps(theta)
        n = self.dim
        h = np.zeros((n, n))
        for k in range(2):
            s2 = self.widths[k] ** 2
            outer = np.outer(diffs[k], diffs[k])
            h += bumps[k] * (outer / s2**2 - np.eye(n) / s2)
        return h


class LinregSynthetic(Objective):
    """Seeded least-squares regression: U = -mean squared residual / 2.

    Exposes ``batch_gradient`` drawing rows with replacement so the
    gradient-noise variance scales exactly as 1 / batch_size.
    """

    def __init__(self, n_data: int = 64, dim: int = 2, noise: float = 0.5, seed: int = 0):
        if n_data < 1 or dim < 1 or noise < 0:
            raise ValueError("invalid linreg parameters")
        rng = np.random.default_rng(int(seed))
        self.x = rng.standard_normal((int(n_data), int(dim)))
        beta = rng.standard_normal(int(dim))
        self.y = self.x @ beta + noise * rng.standard_normal(int(n_data))
        self.dim = int(dim)
        self.data_size = int(n_data)

    def value(self, theta):
        resid = self.y - self.x @ np.asarray(theta, dtype=float)
        return float(-0.5 * np.mean(resid**2))

    def gradient(self, theta):
        resid = self.y - self.x @ np.asarray(theta, dtype=float)
        return self.x.T @ resid / self.data_size

    def hessian(self, theta):
        return -self.x.T @ self.x / self.data_size

    def batch_gradient(self, theta, batch_seed: int, batch_size: int):
        rng = np.random.default_rng(int(batch_seed))
        idx = rng.integers(0, self.data_size, size=int(batch_size))
        xb = self.x[idx]
        resid = self.y[idx] - xb @ np.asarray(theta, dtype=float)
        return xb.T @ resid / batch_size

    def argmax(self) -> np.ndarray:
        sol, *_ = np.linalg.lstsq(self.x, self.y, rcond=None)
        return sol


OBJECTIVE_IDS = ("quadratic", "rosenbrock_neg", "two_bumps", "linreg_synthetic")


def make_objective(objective_id: str, params: dict | None = None) -> Objective:
    """Build a bundled objective by id; unknown ids list the known ones."""
    params = dict(params or {})
    if objective_id == "quadratic":
        dim = int(params.pop("dim", 2))
        a = params.pop("a", None)
        c = params.pop("c", None)
        a = np.eye(dim) if a is None else np.asarray(a, dtype=float)
        c = np.ones(a.shape[0]) if c is None else np.asarray(c, dtype=float)
        _reject_unknown(params, "quadratic")
        return QuadraticObjective(a, c)
    if objective_id == "rosenbrock_neg":
        n = int(params.pop("n", 2))
        _reject_unknown(params, "rosenbrock_neg")
        return NegRosenbrock(n)
    if objective_id == "two_bumps":
        centers = params.pop("centers", [[-1.5], [1.5]])
        widths = params.pop("widths", [0.5, 0.8])
        heights = params.pop("heights", (1.0, 0.6))
        _reject_unknown(params, "two_bumps")
        return TwoBumps(centers, widths, heights)
    if objective_id == "linreg_synthetic":
        kwargs = {
            key: params.pop(key)
            for key in ("n_data", "dim", "noise", "seed")
            if key in params
        }
        _reject_unknown(params, "linreg_synthetic")
        return LinregSynthetic(**kwargs)
    raise ValueError(
        f"unknown objective {objective_id!r}; known ids: {', '.join(OBJECTIVE_IDS)}"
    )


def _reject_unknown(params: dict, objective_id: str) -> None:
    if params:
        raise ValueError(
            f"unknown {objective_id} parameters: {', '.join(sorted(params))}"
        )
