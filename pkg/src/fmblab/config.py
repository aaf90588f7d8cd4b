"""Experiment configuration: parsing, validation, canonical serialization.

Configs are TOML or JSON (decided by file extension).  Validation is
strict and total: unknown keys, unknown ids, and malformed numbers are
collected and reported together, and stochastic runs must carry a seed.
``serialize_config`` emits canonical JSON whose parse compares equal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid experiment configuration."""


SUBCOMMANDS = (
    "run",
    "es",
    "vb",
    "gp",
    "kalman",
    "baldwin",
    "decompose",
    "diverge",
)

OPTIMIZER_IDS = (
    "gd",
    "regularized",
    "newton",
    "natural_gradient",
    "bfgs",
    "mirror",
    "polyak",
    "adam",
    "sgld",
    "sgd",
)

# Optimizers whose steps draw random numbers; runs using them must be seeded.
STOCHASTIC_OPTIMIZERS = ("natural_gradient", "sgld", "sgd")

STOCHASTIC_SUBCOMMANDS = ("es", "baldwin")

OBJECTIVE_IDS = ("quadratic", "rosenbrock_neg", "two_bumps", "linreg_synthetic")

FORMATS = ("csv", "json")

_OPTIMIZER_PARAMS = {
    "gd": {"eta"},
    "regularized": {"eta", "lambda"},
    "newton": set(),
    "natural_gradient": {"eta", "boltzmann_b", "n_samples", "proposal_scale"},
    "bfgs": {"eta"},
    "mirror": {"eta", "potential"},
    "polyak": {"eta", "u"},
    "adam": {"eta", "u", "s", "c", "bias_corrected"},
    "sgld": {"eta", "metric_mode"},
    "sgd": {"eta", "batch_size"},
}

_OBJECTIVE_PARAMS = {
    "quadratic": {"dim", "a", "c"},
    "rosenbrock_neg": {"n"},
    "two_bumps": {"centers", "widths", "heights"},
    "linreg_synthetic": {"n_data", "dim", "noise", "seed"},
}

_PAYLOAD_KEYS = {
    "run": {"objective", "optimizer", "steps", "theta0"},
    "es": {"objective", "pop_size", "generations", "mean0", "sigma0", "c_mu"},
    "vb": {"q", "loglik", "grid", "factors", "steps", "rate", "tol"},
    "gp": {"x", "sigma_g", "ell", "noise_var", "mu0", "y"},
    "kalman": {"f", "q", "h", "r", "init_mean", "init_cov", "observations"},
    "baldwin": {
        "genome_len",
        "pop_size",
        "learn_trials",
        "generations",
        "mutation_rate",
        "heritable",
        "flip_prob",
        "simulate_learning",
    },
    "decompose": {"q", "theta", "w", "dtheta"},
    "diverge": {"q", "q_prime"},
}

_REQUIRED_KEYS = {
    "run": {"objective", "optimizer", "steps"},
    "es": {"objective", "pop_size", "generations"},
    "vb": {"q", "loglik"},
    "gp": {"x", "sigma_g", "ell", "noise_var", "mu0", "y"},
    "kalman": {"f", "q", "h", "r", "init_mean", "init_cov", "observations"},
    "baldwin": {"pop_size", "learn_trials", "generations", "mutation_rate"},
    "decompose": {"q", "theta", "w"},
    "diverge": {"q", "q_prime"},
}

_COMMON_KEYS = {"subcommand", "seed", "out", "format"}


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment description."""

    subcommand: str
    payload: dict
    seed: int | None = None
    out: str | None = None
    format: str = "csv"

    def is_stochastic(self) -> bool:
        if self.subcommand in STOCHASTIC_SUBCOMMANDS:
            return True
        if self.subcommand == "run":
            return self.payload["optimizer"]["id"] in STOCHASTIC_OPTIMIZERS
        return False


def _check_number(errors, data, key, kind=float, positive=False, nonnegative=False):
    if key not in data:
        return None
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"malformed numeric value for {key!r}: {value!r}")
        return None
    if kind is int and not float(value).is_integer():
        errors.append(f"{key!r} must be an integer, got {value!r}")
        return None
    value = kind(value)
    if positive and value <= 0:
        errors.append(f"{key!r} must be positive, got {value!r}")
    if nonnegative and value < 0:
        errors.append(f"{key!r} must be nonnegative, got {value!r}")
    return value


def _validate_block(errors, block, label, known_ids, known_params):
    if not isinstance(block, dict):
        errors.append(f"{label} must be a table with an 'id' field")
        return
    block_id = block.get("id")
    if block_id not in known_ids:
        errors.append(
            f"unknown {label} {block_id!r}; known ids: {', '.join(known_ids)}"
        )
        return
    extra = set(block) - known_params[block_id] - {"id"}
    if extra:
        errors.append(
            f"unknown {label} parameters for {block_id!r}: {', '.join(sorted(extra))}"
        )


def parse_config_data(data: dict, subcommand: str | None = None) -> ExperimentConfig:
    """Validate an already-decoded config mapping.

    Collects every violation before raising, so a bad config reports
    all its problems at once.
    """
    if not isinstance(data, dict):
        raise ConfigError("config must be a table/object at top level")
    errors: list[str] = []
    data = dict(data)

    sub = data.pop("subcommand", subcommand)
    if sub is None:
        errors.append("missing subcommand")
    elif sub not in SUBCOMMANDS:
        errors.append(f"unknown subcommand {sub!r}; known: {', '.join(SUBCOMMANDS)}")
    if subcommand is not None and sub is not None and sub != subcommand:
        errors.append(
            f"config subcommand {sub!r} does not match invoked subcommand {subcommand!r}"
        )
    if errors:
        raise ConfigError("; ".join(errors))

    seed = _check_number(errors, data, "seed", kind=int, nonnegative=True)
    out = data.pop("out", None)
    if out is not None and not isinstance(out, str):
        errors.append("'out' must be a path string")
    fmt = data.pop("format", "csv")
    if fmt not in FORMATS:
        errors.append(f"unknown format {fmt!r}; known: {', '.join(FORMATS)}")
    data.pop("seed", None)

    allowed = _PAYLOAD_KEYS[sub]
    unknown = set(data) - allowed
    if unknown:
        errors.append(f"unknown keys for {sub!r}: {', '.join(sorted(unknown))}")
    missing = _REQUIRED_KEYS[sub] - set(data)
    if missing:
        errors.append(f"missing required keys for {sub!r}: {', '.join(sorted(missing))}")

    payload = {k: v for k, v in data.items() if k in allowed}

    if sub == "run":
        if "objective" in payload:
            _validate_block(
                errors, payload["objective"], "objective", OBJECTIVE_IDS, _OBJECTIVE_PARAMS
            )
        if "optimizer" in payload:
            _validate_block(
                errors, payload["optimizer"], "optimizer", OPTIMIZER_IDS, _OPTIMIZER_PARAMS
            )
        _check_number(errors, payload, "steps", kind=int, nonnegative=True)
    elif sub == "es":
        if "objective" in payload:
            _validate_block(
                errors, payload["objective"], "objective", OBJECTIVE_IDS, _OBJECTIVE_PARAMS
            )
        _check_number(errors, payload, "pop_size", kind=int, positive=True)
        _check_number(errors, payload, "generations", kind=int, nonnegative=True)
        _check_number(errors, payload, "sigma0", positive=True)
        _check_number(errors, payload, "c_mu", positive=True)
    elif sub == "vb":
        _check_number(errors, payload, "steps", kind=int, nonnegative=True)
        _check_number(errors, payload, "rate", positive=True)
        _check_number(errors, payload, "tol", positive=True)
    elif sub == "gp":
        for key in ("sigma_g", "ell", "noise_var"):
            _check_number(errors, payload, key, positive=True)
    elif sub == "baldwin":
        _check_number(errors, payload, "genome_len", kind=int, positive=True)
        _check_number(errors, payload, "pop_size", kind=int, positive=True)
        _check_number(errors, payload, "learn_trials", kind=int, nonnegative=True)
        _check_number(errors, payload, "generations", kind=int, positive=True)
        _check_number(errors, payload, "mutation_rate", nonnegative=True)

    cfg = ExperimentConfig(
        subcommand=sub, payload=payload, seed=seed, out=out, format=fmt
    )
    if cfg.is_stochastic() and seed is None:
        errors.append(f"seed is mandatory for stochastic {sub!r} runs")
    if errors:
        raise ConfigError("; ".join(errors))
    return cfg


def parse_config(path: str, subcommand: str | None = None) -> ExperimentConfig:
    """Parse and validate a TOML or JSON config file (by extension)."""
    if path.endswith(".toml"):
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    elif path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    else:
        raise ConfigError(f"config files must end in .toml or .json: {path}")
    return parse_config_data(data, subcommand=subcommand)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical JSON text; parsing it again yields an equal config."""
    data = {"subcommand": cfg.subcommand, **cfg.payload}
    if cfg.seed is not None:
        data["seed"] = cfg.seed
    if cfg.out is not None:
        data["out"] = cfg.out
    data["format"] = cfg.format
    return json.dumps(data, sort_keys=True, indent=2)
