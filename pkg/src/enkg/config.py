"""Strict TOML run configuration.

Unknown sections or keys are rejected, and every value is type- and
range-checked before any computation starts. Errors carry the dotted key.
"""
import copy
import sys
from dataclasses import dataclass
from importlib import resources
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .exceptions import ConfigError

__all__ = ["RunConfig", "load_config", "parse_config", "preset_names", "load_preset"]

PROBLEMS = ("linear-gaussian", "gmm-toy", "phase-retrieval", "navier-stokes")
METHODS = ("enkg", "eki", "gsg-forward", "gsg-central", "exact-grad", "unconditional")


def _num(positive=False, nonneg=False):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return "must be a number"
        if positive and not v > 0:
            return "must be positive"
        if nonneg and v < 0:
            return "must be non-negative"
        return None
    return check


def _int(minimum=1):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, int):
            return "must be an integer"
        if v < minimum:
            return f"must be at least {minimum}"
        return None
    return check


def _choice(*options):
    def check(v):
        return None if v in options else f"must be one of {', '.join(map(repr, options))}"
    return check


def _bool(v):
    return None if isinstance(v, bool) else "must be true or false"


def _str(v):
    return None if isinstance(v, str) else "must be a string"


def _numbers(length=None, positive=False):
    def check(v):
        if not isinstance(v, list) or not v:
            return "must be a non-empty list of numbers"
        if any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
            return "must be a list of numbers"
        if length is not None and len(v) != length:
            return f"must have {length} entries"
        if positive and any(x <= 0 for x in v):
            return "entries must be positive"
        return None
    return check


def _forcing(v):
    if v in ("default", "none"):
        return None
    return "must be 'default' or 'none'"


# section -> key -> (validator, default)
COMMON = {
    "": {
        "problem": (_choice(*PROBLEMS), None),
        "method": (_choice(*METHODS), "enkg"),
        "seed": (_int(0), 0),
        "out": (_str, "enkg-run"),
        "workers": (_int(1), 1),
        "render": (_bool, False),
    },
    "grid": {
        "n_steps": (_int(1), 100),
        "sigma_max": (_num(positive=True), 80.0),
        "rho": (_num(positive=True), 7.0),
    },
    "guidance": {
        "particles": (_int(1), 256),
        "scale": (_num(positive=True), 2.0),
        "step_rule": (_choice("trace", "adaptive", "adaptive-particle", "frobenius"), "trace"),
        "corrections_per_step": (_int(1), 1),
        "prediction": (_choice("euler", "heun"), "heun"),
        "solver_method": (_choice("euler", "heun"), "heun"),
        "solver_steps": (_int(1), 10),
        "solver_rho": (_num(positive=True), 7.0),
    },
    "noise": {
        "sigma": (_num(nonneg=True), 0.0),
        "assumed": (_num(positive=True), None),
    },
    "eki": {
        "iterations": (_int(1), None),
        "scale": (_num(positive=True), 1.0),
        "step_rule": (_choice("trace", "adaptive", "adaptive-particle", "frobenius"), "trace"),
    },
    "gsg": {
        "mu": (_num(positive=True), 1e-3),
        "q": (_int(1), 10_000),
        "w": (_num(nonneg=True), 1.0),
        "samples": (_int(1), 1),
    },
    "exact_grad": {
        "w": (_num(nonneg=True), 1.0),
    },
}

PROBLEM_SECTIONS = {
    "linear-gaussian": {
        "prior": {"offset": (_num(), 2.0), "jitter": (_num(nonneg=True), 0.5),
                  "cov_floor": (_num(positive=True), 0.5), "n": (_int(1), 16)},
        "forward": {"m": (_int(1), 8)},
    },
    "gmm-toy": {
        "prior": {"weights": (_numbers(positive=True), [0.5, 0.5]),
                  "means": (_numbers(), [-2.0, 2.0]),
                  "variances": (_numbers(positive=True), [0.25, 0.25])},
        "forward": {},
    },
    "phase-retrieval": {
        "prior": {"shape": (_numbers(2), [8, 8]), "tau": (_num(positive=True), 3.0),
                  "alpha": (_num(positive=True), 2.0), "amplitude": (_num(positive=True), 1.0)},
        "forward": {"pad_factor": (_int(1), 2)},
    },
    "navier-stokes": {
        "prior": {"shape": (_numbers(2), [32, 32]), "tau": (_num(positive=True), 2.0),
                  "alpha": (_num(positive=True), 3.0), "amplitude": (_num(positive=True), 102.0)},
        "forward": {"nu": (_num(positive=True), 1e-3), "t_end": (_num(positive=True), 1.0),
                    "dt": (_num(positive=True), 0.025), "factor": (_int(1), 2),
                    "forcing": (_forcing, "default"), "dealias": (_bool, True)},
    },
}


@dataclass
class RunConfig:
    """Validated configuration; ``sections`` maps section name to its values."""

    problem: str
    method: str
    seed: int
    out: str
    workers: int
    render: bool
    sections: dict

    def section(self, name):
        return self.sections[name]

    def replace(self, **top):
        new = copy.deepcopy(self)
        for key, value in top.items():
            if value is not None:
                setattr(new, key, value)
        return new


def _validate(section, spec, values, prefix):
    if not isinstance(values, dict):
        raise ConfigError("must be a table", key=prefix or section)
    out = {}
    for key, value in values.items():
        dotted = f"{prefix}.{key}" if prefix else key
        if key not in spec:
            raise ConfigError("unknown key", key=dotted)
        problem = spec[key][0](value)
        if problem:
            raise ConfigError(problem, key=dotted)
        out[key] = value
    for key, (_, default) in spec.items():
        out.setdefault(key, copy.deepcopy(default))
    return out


def parse_config(data):
    """Validate a parsed TOML mapping and fill in defaults."""
    data = dict(data)
    if "problem" not in data:
        raise ConfigError("is required", key="problem")
    problem = data["problem"]
    err = COMMON[""]["problem"][0](problem)
    if err:
        raise ConfigError(err, key="problem")
    schema = dict(COMMON)
    schema.update(PROBLEM_SECTIONS[problem])
    top = {k: v for k, v in data.items() if not isinstance(v, dict)}
    tables = {k: v for k, v in data.items() if isinstance(v, dict)}
    for name in tables:
        if name not in schema or name == "":
            raise ConfigError("unknown section", key=name)
    top = _validate("", schema[""], top, "")
    sections = {name: _validate(name, spec, tables.get(name, {}), name)
                for name, spec in schema.items() if name}
    if problem == "gmm-toy":
        prior = sections["prior"]
        if not len(prior["weights"]) == len(prior["means"]) == len(prior["variances"]):
            raise ConfigError("weights, means and variances must have equal length", key="prior")
        if abs(sum(prior["weights"]) - 1.0) > 1e-9:
            raise ConfigError("weights must sum to 1", key="prior.weights")
    if problem in ("phase-retrieval", "navier-stokes"):
        shape = sections["prior"]["shape"]
        if any(int(s) != s or s < 2 or int(s) & (int(s) - 1) for s in shape):
            raise ConfigError("sides must be powers of two", key="prior.shape")
        sections["prior"]["shape"] = [int(s) for s in shape]
    if problem == "navier-stokes":
        fwd = sections["forward"]
        steps = round(fwd["t_end"] / fwd["dt"])
        if abs(steps * fwd["dt"] - fwd["t_end"]) > 1e-9 * fwd["t_end"]:
            raise ConfigError("must divide forward.t_end", key="forward.dt")
        if any(s % fwd["factor"] for s in sections["prior"]["shape"]):
            raise ConfigError("must divide the grid size", key="forward.factor")
    if sections["noise"]["sigma"] == 0 and sections["noise"]["assumed"] is None:
        sections["noise"]["assumed"] = 0.01
    if sections["noise"]["assumed"] is None:
        sections["noise"]["assumed"] = sections["noise"]["sigma"]
    return RunConfig(top["problem"], top["method"], top["seed"], top["out"],
                     top["workers"], top["render"], sections)


def load_config(path):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    return parse_config(data)


def preset_names():
    files = resources.files("enkg").joinpath("presets").iterdir()
    return sorted(p.name[:-5] for p in files if p.name.endswith(".toml"))


def load_preset(name):
    path = resources.files("enkg").joinpath("presets", f"{name}.toml")
    if not path.is_file():
        raise ConfigError(f"no preset named {name!r}; available: {', '.join(preset_names())}")
    return parse_config(tomllib.loads(path.read_text(encoding="utf-8")))
