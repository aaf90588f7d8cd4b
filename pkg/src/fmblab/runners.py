"""Execute validated configs: deterministic traces plus a run manifest.

Numeric trace cells are written with the shortest round-trip (repr)
representation of binary64, so identical config + seed produces a
byte-identical trace file.  The manifest echoes the config, library
version, seed, and wall time; it is a sidecar and not part of the
hashed trace.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .bayes import DiscreteModel, MeanFieldFamily, variational_fit
from .config import ConfigError, ExperimentConfig, serialize_config
from .evo import EsState, es_optimize
from .filters import FilterState, GpModel, LinearSystem, gp_update, kalman_run
from .hierarchy import BaldwinConfig, baldwin_experiment
from .infogeo import (
    DistributionPair,
    dalembert_residual,
    fisher_rao_sq,
    fisher_rao_sphere_sq,
    jeffreys,
    kl,
)
from .objectives import make_objective
from .optim import OptimizerState
from . import optim
from .price import Population, fmb_decompose


def format_cell(value) -> str:
    """Canonical text for one trace cell (shortest float round trip)."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def render_trace(header: list[str], rows: list[list], fmt: str) -> str:
    if fmt == "csv":
        lines = [",".join(header)]
        lines.extend(",".join(format_cell(v) for v in row) for row in rows)
        return "\n".join(lines) + "\n"
    payload = {
        "columns": header,
        "rows": [[json.loads(format_cell(v)) for v in row] for row in rows],
    }
    return json.dumps(payload, indent=2) + "\n"


_OPTIMIZER_DEFAULTS = {
    "gd": {"eta": 0.1},
    "regularized": {"eta": 0.1, "lambda": 0.1},
    "newton": {},
    "natural_gradient": {
        "eta": 0.5,
        "boltzmann_b": 1.0,
        "n_samples": 200,
        "proposal_scale": 0.5,
    },
    "bfgs": {"eta": 0.1},
    "mirror": {"eta": 0.1, "potential": "euclidean"},
    "polyak": {"eta": 0.1, "u": 0.9},
    "adam": {"eta": 0.01, "u": 0.9, "s": 0.99, "c": 1e-8, "bias_corrected": False},
    "sgld": {"eta": 0.01, "metric_mode": "identity"},
    "sgd": {"eta": 0.1, "batch_size": 8},
}


def _optimizer_stepper(optimizer_id: str, hyper: dict, rng):
    if optimizer_id == "gd":
        return lambda obj, st: optim.step_gd(obj, st, hyper["eta"])
    if optimizer_id == "regularized":
        return lambda obj, st: optim.step_regularized(
            obj, st, hyper["eta"], hyper["lambda"]
        )
    if optimizer_id == "newton":
        return lambda obj, st: optim.step_newton(obj, st)
    if optimizer_id == "natural_gradient":
        return lambda obj, st: optim.step_natural_gradient(
            obj,
            st,
            hyper["eta"],
            hyper["boltzmann_b"],
            int(hyper["n_samples"]),
            hyper["proposal_scale"],
            rng,
        )
    if optimizer_id == "bfgs":
        return lambda obj, st: optim.step_bfgs(obj, st, hyper["eta"])
    if optimizer_id == "mirror":
        return lambda obj, st: optim.step_mirror(
            obj, st, hyper["eta"], hyper["potential"]
        )
    if optimizer_id == "polyak":
        return lambda obj, st: optim.step_polyak(obj, st, hyper["eta"], hyper["u"])
    if optimizer_id == "adam":
        return lambda obj, st: optim.step_adam(
            obj,
            st,
            hyper["eta"],
            hyper["u"],
            hyper["s"],
            hyper["c"],
            bias_corrected=bool(hyper["bias_corrected"]),
        )
    if optimizer_id == "sgld":
        return lambda obj, st: optim.step_sgld(
            obj, st, hyper["eta"], hyper["metric_mode"], rng
        )
    if optimizer_id == "sgd":
        return lambda obj, st: optim.step_sgd(
            obj, st, hyper["eta"], int(hyper["batch_size"]), rng
        )
    raise ConfigError(f"unknown optimizer {optimizer_id!r}")


def _run_optimizer(cfg: ExperimentConfig):
    payload = cfg.payload
    objective_block = dict(payload["objective"])
    obj = make_objective(objective_block.pop("id"), objective_block)
    optimizer_block = dict(payload["optimizer"])
    optimizer_id = optimizer_block.pop("id")
    hyper = {**_OPTIMIZER_DEFAULTS[optimizer_id], **optimizer_block}
    seed = cfg.seed if cfg.seed is not None else 0
    rng = np.random.default_rng(seed)
    theta0 = payload.get("theta0")
    theta0 = np.zeros(obj.dim) if theta0 is None else np.asarray(theta0, dtype=float)
    state = OptimizerState.initial(theta0, seed=seed)
    stepper = _optimizer_stepper(optimizer_id, hyper, rng)

    header = (
        ["t"]
        + [f"theta{i}" for i in range(obj.dim)]
        + ["value", "force_norm", "predicted_gain", "bias_norm", "noise_norm"]
    )
    rows = []
    for t in range(1, int(payload["steps"]) + 1):
        state, report = stepper(obj, state)
        # Re-check the reconstruction identity on the emitted row, not
        # just inside StepReport construction.
        recon = report.M_metric @ report.f_force + report.b_bias + report.xi_noise
        gap = float(np.max(np.abs(report.delta_theta - recon)))
        if gap > 1e-10 * max(1.0, float(np.max(np.abs(report.delta_theta)))):
            raise ValueError(f"trace row {t} violates the reconstruction identity")
        rows.append(
            [t]
            + [float(x) for x in state.theta]
            + [
                obj.value(state.theta),
                float(np.linalg.norm(report.f_force)),
                report.predicted_gain(),
                float(np.linalg.norm(report.b_bias)),
                float(np.linalg.norm(report.xi_noise)),
            ]
        )
    return header, rows


def _run_es(cfg: ExperimentConfig):
    payload = cfg.payload
    objective_block = dict(payload["objective"])
    obj = make_objective(objective_block.pop("id"), objective_block)
    mean0 = payload.get("mean0")
    mean0 = np.zeros(obj.dim) if mean0 is None else np.asarray(mean0, dtype=float)
    state = EsState.initial(mean0, sigma=payload.get("sigma0", 0.5), seed=cfg.seed)
    _, trace = es_optimize(
        obj,
        state,
        generations=int(payload["generations"]),
        pop_size=int(payload["pop_size"]),
        c_mu=payload.get("c_mu", 0.3),
    )
    header = ["generation", "best_value", "mean_value", "cov_trace", "cov_eigmin"]
    has_error = trace and "mean_error" in trace[0]
    if has_error:
        header.append("mean_error")
    rows = []
    for row in trace:
        out = [row[k] for k in header]
        rows.append(out)
    return header, rows


def _run_vb(cfg: ExperimentConfig):
    payload = cfg.payload
    model = DiscreteModel(
        prior=np.asarray(payload["q"], dtype=float),
        loglik=np.asarray(payload["loglik"], dtype=float),
        grid=payload.get("grid"),
    )
    factors = payload.get("factors", [model.size])
    family = MeanFieldFamily(tuple(int(k) for k in factors))
    _, reports = variational_fit(
        model,
        family,
        steps=int(payload.get("steps", 200)),
        rate=float(payload.get("rate", 0.5)),
        tol=float(payload.get("tol", 1e-6)),
    )
    header = ["step", "elbo", "direct", "inertial", "kl_to_true"]
    rows = [
        [i, r.elbo, r.direct_term, r.inertial_term, r.kl_to_true]
        for i, r in enumerate(reports)
    ]
    return header, rows


def _run_gp(cfg: ExperimentConfig):
    payload = cfg.payload
    model = GpModel(
        inputs=np.asarray(payload["x"], dtype=float),
        sigma_g=float(payload["sigma_g"]),
        ell=float(payload["ell"]),
        noise_var=float(payload["noise_var"]),
        prior_mean=np.asarray(payload["mu0"], dtype=float),
    )
    y = np.asarray(payload["y"], dtype=float)
    update = gp_update(model, y)
    header = ["i", "y", "prior_mean", "force", "delta_mean", "posterior_mean"]
    rows = [
        [
            i,
            float(y[i]),
            float(model.prior_mean[i]),
            float(update.f[i]),
            float(update.delta_mean[i]),
            float(update.posterior_mean[i]),
        ]
        for i in range(y.shape[0])
    ]
    return header, rows


def _run_kalman(cfg: ExperimentConfig):
    payload = cfg.payload
    sys = LinearSystem(
        dynamics=np.asarray(payload["f"], dtype=float),
        process_noise=np.asarray(payload["q"], dtype=float),
        observation=np.asarray(payload["h"], dtype=float),
        measurement_noise=np.asarray(payload["r"], dtype=float),
    )
    init = FilterState(
        mean=np.asarray(payload["init_mean"], dtype=float),
        cov=np.asarray(payload["init_cov"], dtype=float),
    )
    observations = [np.asarray(y, dtype=float) for y in payload["observations"]]
    trace = kalman_run(sys, init, observations)
    n = init.mean.shape[0]
    header = ["t"] + [f"x{i}" for i in range(n)] + ["cov_trace", "innovation_norm"]
    rows = []
    for t, state in enumerate(trace.states):
        innovation = float("nan") if t == 0 else trace.innovation_norms[t - 1]
        rows.append(
            [t]
            + [float(x) for x in state.mean]
            + [float(np.trace(state.cov)), innovation]
        )
    return header, rows


def _run_baldwin(cfg: ExperimentConfig):
    payload = cfg.payload
    bcfg = BaldwinConfig(seed=cfg.seed, **payload)
    result = baldwin_experiment(bcfg)
    header = ["generation", "mean_hamming", "best_hamming", "mean_fitness", "success"]
    rows = []
    n_rows = result.mean_hamming_trace.shape[0]
    for g in range(n_rows):
        hit = result.success and result.generations_to_target == g
        rows.append(
            [
                g,
                float(result.mean_hamming_trace[g]),
                int(result.best_hamming_trace[g]),
                float(result.mean_fitness_trace[g]),
                1 if hit else 0,
            ]
        )
    return header, rows


def _run_decompose(cfg: ExperimentConfig) -> dict:
    pop = Population.from_dict(cfg.payload)
    return fmb_decompose(pop).to_dict()


def _run_diverge(cfg: ExperimentConfig) -> dict:
    pair = DistributionPair(
        q=np.asarray(cfg.payload["q"], dtype=float),
        q_prime=np.asarray(cfg.payload["q_prime"], dtype=float),
    )
    return {
        "fisher_rao_sq": fisher_rao_sq(pair),
        "kl_forward": kl(pair.q_prime, pair.q),
        "jeffreys": jeffreys(pair),
        "fisher_rao_sphere_sq": fisher_rao_sphere_sq(pair),
        "dalembert_residual": dalembert_residual(pair),
    }


_TABLE_RUNNERS = {
    "run": _run_optimizer,
    "es": _run_es,
    "vb": _run_vb,
    "gp": _run_gp,
    "kalman": _run_kalman,
    "baldwin": _run_baldwin,
}

_RECORD_RUNNERS = {
    "decompose": _run_decompose,
    "diverge": _run_diverge,
}


def run_experiment(
    cfg: ExperimentConfig,
    out_path: str | None = None,
    fmt: str | None = None,
    seed: int | None = None,
) -> dict:
    """Run one experiment; write the trace and manifest, return the manifest.

    ``out_path``, ``fmt``, and ``seed`` override the config.  Record
    subcommands (decompose, diverge) put the JSON record in the
    manifest under "record" and only write a file when a path is given.
    """
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    if fmt is not None:
        cfg = replace(cfg, format=fmt)
    if out_path is not None:
        cfg = replace(cfg, out=out_path)
    if cfg.is_stochastic() and cfg.seed is None:
        raise ConfigError(f"seed is mandatory for stochastic {cfg.subcommand!r} runs")

    started = time.perf_counter()
    manifest = {
        "config": json.loads(serialize_config(cfg)),
        "version": __version__,
        "seed": cfg.seed,
    }

    if cfg.subcommand in _RECORD_RUNNERS:
        record = _RECORD_RUNNERS[cfg.subcommand](cfg)
        text = json.dumps(record, indent=2) + "\n"
        manifest["record"] = record
        if cfg.out:
            with open(cfg.out, "w", encoding="utf-8") as fh:
                fh.write(text)
            manifest["trace_path"] = cfg.out
    else:
        header, rows = _TABLE_RUNNERS[cfg.subcommand](cfg)
        text = render_trace(header, rows, cfg.format)
        target = cfg.out or f"fmblab_{cfg.subcommand}.{cfg.format}"
        with open(target, "w", encoding="utf-8") as fh:
            fh.write(text)
        manifest["trace_path"] = target
        manifest["trace_sha256"] = hashlib.sha256(text.encode()).hexdigest()
        manifest["rows"] = len(rows)

    manifest["wall_time_s"] = time.perf_counter() - started
    if manifest.get("trace_path"):
        with open(manifest["trace_path"] + ".manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
    return manifest
