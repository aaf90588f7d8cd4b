"""Fast invariant suite behind the ``verify`` subcommand.

Each check re-derives one of the library's core identities on a small
seeded corpus and reports pass/fail.  The suite is a smoke screen for
installations and refactors; the full acceptance corpus lives in the
test suite.
"""

from __future__ import annotations

import numpy as np

from .bayes import DiscreteModel, MeanFieldFamily, bayes_update, elbo, variational_fit
from .evo import EsState, es_sample, es_update
from .filters import FilterState, GpModel, LinearSystem, gp_update, kalman_update
from .hierarchy import GroupedPopulation, hierarchical_fmb, hierarchical_price
from .infogeo import DistributionPair, dalembert_residual, fisher_rao_sq, kl
from .objectives import (
    LinregSynthetic,
    NegRosenbrock,
    QuadraticObjective,
    TwoBumps,
    make_objective,
)
from .optim import (
    OptimizerState,
    gradient_fd_error,
    hessian_fd_error,
    step_adam,
    step_bfgs,
    step_gd,
    step_mirror,
    step_newton,
    step_polyak,
    step_regularized,
)
from .price import Population, fmb_decompose, lande_step, price_update


def _random_population(rng, m=None, n=None, with_dtheta=True) -> Population:
    m = m if m is not None else int(rng.integers(2, 20))
    n = n if n is not None else int(rng.integers(1, 5))
    q = rng.random(m) + 0.05
    q /= q.sum()
    return Population(
        q=q,
        theta=rng.standard_normal((m, n)),
        w=rng.random(m) + 0.1,
        dtheta=0.3 * rng.standard_normal((m, n)) if with_dtheta else None,
    )


def _random_pair(rng, m=None) -> DistributionPair:
    m = m if m is not None else int(rng.integers(2, 15))
    q = rng.random(m) + 0.05
    qp = rng.random(m) + 0.05
    return DistributionPair(q / q.sum(), qp / qp.sum())


def check_price_identity() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(200):
        pop = _random_population(rng)
        dec = price_update(pop)
        qp = pop.updated_weights()
        direct = qp @ (pop.theta + pop.dtheta) - pop.q @ pop.theta
        worst = max(worst, float(np.max(np.abs(dec.delta_mean - direct))))
    return worst < 1e-12, f"max deviation {worst:.2e}"


def check_fmb_reconstruction() -> tuple[bool, str]:
    rng = np.random.default_rng(12)
    worst = 0.0
    for k in range(200):
        pop = _random_population(rng)
        if k % 4 == 0:  # rank-deficient: duplicate a column
            theta = pop.theta.copy()
            if theta.shape[1] > 1:
                theta[:, -1] = theta[:, 0]
            pop = Population(q=pop.q, theta=theta, w=pop.w, dtheta=pop.dtheta)
        dec = fmb_decompose(pop)
        target = price_update(pop).delta_mean
        worst = max(worst, float(np.max(np.abs(dec.reconstruct() - target))))
    return worst < 1e-8, f"max reconstruction error {worst:.2e}"


def check_fisher_rao_variance() -> tuple[bool, str]:
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(200):
        pair = _random_pair(rng)
        w = pair.q_prime / pair.q
        var = float(pair.q @ (w * w) - (pair.q @ w) ** 2)
        worst = max(worst, abs(fisher_rao_sq(pair) - var))
        worst = max(worst, abs(dalembert_residual(pair)))
    return worst < 1e-12, f"max deviation {worst:.2e}"


def check_kl_nonnegative() -> tuple[bool, str]:
    rng = np.random.default_rng(14)
    low = 0.0
    for _ in range(200):
        pair = _random_pair(rng)
        low = min(low, kl(pair.q, pair.q_prime))
    return low >= 0.0, f"min KL {low:.2e}"


def check_objective_gradients() -> tuple[bool, str]:
    rng = np.random.default_rng(15)
    a = rng.standard_normal((3, 3))
    objectives = [
        QuadraticObjective(a @ a.T + 3 * np.eye(3), rng.standard_normal(3)),
        NegRosenbrock(4),
        TwoBumps([[-1.5, 0.0], [1.5, 0.5]], [0.6, 0.9]),
        LinregSynthetic(n_data=48, dim=3, noise=0.4, seed=2),
    ]
    worst = 0.0
    for obj in objectives:
        for _ in range(20):
            theta = rng.standard_normal(obj.dim)
            worst = max(worst, gradient_fd_error(obj, theta))
            worst = max(worst, hessian_fd_error(obj, theta))
    return worst < 1e-4, f"max relative FD error {worst:.2e}"


def check_step_reports() -> tuple[bool, str]:
    rng = np.random.default_rng(16)
    a = rng.standard_normal((3, 3))
    obj = QuadraticObjective(a @ a.T + 3 * np.eye(3), rng.standard_normal(3))
    state = OptimizerState.initial(rng.standard_normal(3))
    worst = 0.0
    steppers = [
        lambda st: step_gd(obj, st, 0.05),
        lambda st: step_regularized(obj, st, 0.05, 0.5),
        lambda st: step_newton(obj, st),
        lambda st: step_bfgs(obj, st, 0.05),
        lambda st: step_polyak(obj, st, 0.05, 0.8),
        lambda st: step_adam(obj, st, 0.05, 0.9, 0.99, 1e-8),
    ]
    for stepper in steppers:
        st = state
        for _ in range(5):
            st, report = stepper(st)
            gap = np.max(np.abs(report.delta_theta - report.reconstruct()))
            worst = max(worst, float(gap))
            if report.predicted_gain() < -1e-12:
                return False, "negative predicted gain under a PSD metric"
    return worst < 1e-10, f"max reconstruction gap {worst:.2e}"


def check_newton_exact() -> tuple[bool, str]:
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 6))
        a = rng.standard_normal((n, n))
        obj = QuadraticObjective(a @ a.T + n * np.eye(n), rng.standard_normal(n))
        state = OptimizerState.initial(rng.standard_normal(n))
        state, _ = step_newton(obj, state)
        worst = max(worst, float(np.max(np.abs(state.theta - obj.argmax()))))
    return worst < 1e-8, f"max distance to optimum {worst:.2e}"


def check_mirror_forms() -> tuple[bool, str]:
    rng = np.random.default_rng(18)
    obj = QuadraticObjective(np.eye(3), rng.standard_normal(3))
    theta = rng.random(3) + 0.2
    theta /= theta.sum()
    st_g, _ = step_gd(obj, OptimizerState.initial(theta), 0.05)
    st_e, _ = step_mirror(obj, OptimizerState.initial(theta), 0.05, "euclidean")
    if not np.array_equal(st_g.theta, st_e.theta):
        return False, "euclidean mirror differs from gradient ascent"
    st_m, _ = step_mirror(obj, OptimizerState.initial(theta), 0.05, "entropy")
    g = obj.gradient(theta)
    mw = theta * np.exp(0.05 * g)
    mw /= mw.sum()
    gap = float(np.max(np.abs(st_m.theta - mw)))
    return gap < 1e-12, f"multiplicative-weights gap {gap:.2e}"


def check_gp_form() -> tuple[bool, str]:
    rng = np.random.default_rng(19)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 10))
        model = GpModel(
            inputs=rng.standard_normal((n, 2)),
            sigma_g=0.5 + rng.random(),
            ell=0.5 + rng.random(),
            noise_var=0.1 + rng.random(),
            prior_mean=rng.standard_normal(n),
        )
        y = rng.standard_normal(n)
        update = gp_update(model, y)
        k = model.gram()
        direct = k @ np.linalg.solve(k + model.noise_var * np.eye(n), y - model.prior_mean)
        worst = max(worst, float(np.max(np.abs(update.delta_mean - direct))))
    return worst < 1e-8, f"max gap to textbook form {worst:.2e}"


def check_kalman_form() -> tuple[bool, str]:
    rng = np.random.default_rng(20)
    worst = 0.0
    for _ in range(20):
        n, k = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        a = rng.standard_normal((n, n))
        prior = FilterState(rng.standard_normal(n), a @ a.T + np.eye(n))
        rmat = rng.standard_normal((k, k))
        sys = LinearSystem(
            dynamics=np.eye(n),
            process_noise=np.zeros((n, n)),
            observation=rng.standard_normal((k, n)),
            measurement_noise=rmat @ rmat.T + np.eye(k),
        )
        y = rng.standard_normal(k)
        posterior, report = kalman_update(prior, sys, y)
        h = sys.observation
        s = h @ prior.cov @ h.T + sys.measurement_noise
        gain = prior.cov @ h.T @ np.linalg.inv(s)
        direct = gain @ (y - h @ prior.mean)
        worst = max(worst, float(np.max(np.abs(report.delta_theta - direct))))
        if np.linalg.eigvalsh(posterior.cov).min() <= 0:
            return False, "posterior covariance not positive definite"
    return worst < 1e-10, f"max gap to gain form {worst:.2e}"


def check_elbo() -> tuple[bool, str]:
    rng = np.random.default_rng(21)
    worst = -np.inf
    for _ in range(50):
        m = int(rng.integers(2, 12))
        q = rng.random(m) + 0.05
        model = DiscreteModel(prior=q / q.sum(), loglik=rng.standard_normal(m))
        qhat = rng.random(m) + 0.05
        qhat /= qhat.sum()
        report = elbo(model, qhat)
        worst = max(worst, report.elbo - report.log_evidence)
    model = DiscreteModel(prior=[0.4, 0.3, 0.3], loglik=[0.2, -0.5, 1.0])
    _, reports = variational_fit(model, MeanFieldFamily((3,)), steps=400, rate=1.0)
    tight = reports[-1].kl_to_true
    ok = worst <= 1e-10 and tight < 1e-6
    return ok, f"max bound violation {worst:.2e}, saturated kl_to_true {tight:.2e}"


def check_bayes_growth() -> tuple[bool, str]:
    rng = np.random.default_rng(22)
    worst = 0.0
    for _ in range(50):
        m = int(rng.integers(2, 12))
        q = rng.random(m) + 0.05
        model = DiscreteModel(prior=q / q.sum(), loglik=rng.standard_normal(m))
        posterior, growth = bayes_update(model)
        worst = max(worst, abs(float(model.prior @ growth) - 1.0))
        worst = max(worst, float(np.max(np.abs(model.prior * growth - posterior))))
    return worst < 1e-12, f"max growth-factor deviation {worst:.2e}"


def check_hierarchy() -> tuple[bool, str]:
    rng = np.random.default_rng(23)
    worst = 0.0
    for _ in range(50):
        n_groups = int(rng.integers(2, 5))
        n = int(rng.integers(1, 4))
        qg = rng.random(n_groups) + 0.1
        qg /= qg.sum()
        member_q, thetas, raws, dthetas = [], [], [], []
        for _g in range(n_groups):
            m = int(rng.integers(2, 6))
            q = rng.random(m) + 0.1
            member_q.append(q / q.sum())
            thetas.append(rng.standard_normal((m, n)))
            raws.append(rng.random(m) + 0.1)
            dthetas.append(0.2 * rng.standard_normal((m, n)))
        gpop = GroupedPopulation.from_raw(qg, member_q, thetas, raws, dthetas)
        _, _, total = hierarchical_price(gpop)
        flat = price_update(gpop.flatten()).delta_mean
        worst = max(worst, float(np.max(np.abs(total - flat))))
        hierarchical_fmb(gpop)  # construction enforces both laws
    return worst < 1e-10, f"max hierarchical/flat gap {worst:.2e}"


def check_es_lande() -> tuple[bool, str]:
    obj = make_objective("quadratic", {"dim": 3})
    state = EsState.initial(np.ones(3), sigma=0.4, seed=5)
    worst = 0.0
    for _ in range(5):
        sample = es_sample(state, 32, obj)
        expected = state.mean + lande_step(sample.population)
        new_state = es_update(state, sample.population)
        worst = max(worst, float(np.max(np.abs(new_state.mean - expected))))
        state = new_state
    return worst == 0.0, f"max mean-update gap {worst:.2e}"


CHECKS = [
    ("price identity", check_price_identity),
    ("fmb reconstruction", check_fmb_reconstruction),
    ("fisher-rao equals var(w), conservation residual", check_fisher_rao_variance),
    ("kl nonnegative", check_kl_nonnegative),
    ("objective gradients vs finite differences", check_objective_gradients),
    ("step reports reconstruct", check_step_reports),
    ("newton exact on concave quadratics", check_newton_exact),
    ("mirror forms", check_mirror_forms),
    ("gp metric-force form", check_gp_form),
    ("kalman metric-force form", check_kalman_form),
    ("elbo bound and saturated fit", check_elbo),
    ("bayes growth factors", check_bayes_growth),
    ("hierarchical consistency", check_hierarchy),
    ("es mean update equals selection response", check_es_lande),
]


def run_all(log=print) -> bool:
    """Run every check; log one line per check; True when all pass."""
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        all_ok &= ok
        log(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    return all_ok
