"""Experiment configuration: parsing, validation, serialization and hashing."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from .. import __version__
from ..ensembles import ENSEMBLE_TAGS
from ..errors import ConfigError
from ..transforms import is_power_of_two

EXPERIMENTS = ("fig1_lambda_sweep", "fig1_iterations", "fig1_histograms",
               "fig2_sparsity_sweep", "vamp_se", "class_report")
PRIORS = ("five_point", "sparse_positive", "sparse_centered", "custom")
HADAMARD_TAGS = ("spike_hwt", "spike_hwt_unsigned", "mask", "partial_hadamard")


def default_lambda_grid():
    return [float(x) for x in np.logspace(-1.0, 0.0, 16)]


def default_chi_grid():
    return [float(x) for x in np.linspace(0.05, 0.6, 12)]


@dataclass
class ExperimentConfig:
    experiment: str
    N: int = 2 ** 14
    ensembles: list = field(default_factory=lambda: [{"tag": "spike_sine"}])
    prior: dict = field(default_factory=lambda: {"name": "five_point"})
    sigma: float = 1.0
    regularizer: dict = field(default_factory=lambda: {"kind": "elastic_net", "ratio": 1e-3})
    lambda1_grid: list = field(default_factory=default_lambda_grid)
    chi_grid: list = field(default_factory=default_chi_grid)
    trials: int = 8
    iterations: int = 100
    output_dir: str = "results"
    master_seed: int = 0
    # fixed penalty for the iteration / histogram panels
    lambda1: float = 1.0
    record_every: int = 1
    tol: float = 1e-10
    nonzero_threshold: float = 1e-8
    bins: int = 101
    hist_range: list = field(default_factory=lambda: [-25.0, 25.0])
    # dynamics
    T: int = 3
    mc_samples: int = 100_000
    dynamics: str = "default"
    ks: list = field(default_factory=lambda: [1, 2, 3, 4])

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def header(self):
        return {"config_hash": self.hash(), "version": __version__, "master_seed": self.master_seed}

    def penalty(self, lambda1):
        """Regularizer spec at a given l1 weight (``lambda2 = ratio * lambda1``)."""
        reg = dict(self.regularizer)
        kind = reg.get("kind", "elastic_net")
        if "ratio" in reg:
            return {"kind": kind, "lambda1": float(lambda1),
                    "lambda2": float(reg["ratio"]) * float(lambda1)}
        return {"kind": kind, "lambda1": float(lambda1), "lambda2": float(reg.get("lambda2", 0.0))}


_FIELD_TYPES = {f.name: f for f in fields(ExperimentConfig)}


def _need(cond, path, message):
    if not cond:
        raise ConfigError(path, message)


def _number(d, key, kind=float):
    v = d[key]
    _need(isinstance(v, (int, float)) and not isinstance(v, bool), key,
          f"expected a number, got {v!r}")
    if kind is int:
        _need(float(v).is_integer(), key, f"expected an integer, got {v!r}")
    return kind(v)


def prior_names(cfg):
    """Prior names of a config: ``prior.names`` (a list) or the single ``prior.name``."""
    names = cfg.prior.get("names")
    return list(names) if isinstance(names, list) else [cfg.prior.get("name")]


def validate(cfg):
    _need(cfg.experiment in EXPERIMENTS, "experiment",
          f"must be one of {', '.join(EXPERIMENTS)}")
    _need(cfg.N >= 2, "N", "must be at least 2")
    _need(isinstance(cfg.ensembles, list) and cfg.ensembles, "ensembles", "must be a nonempty list")
    for i, ens in enumerate(cfg.ensembles):
        _need(isinstance(ens, dict) and "tag" in ens, f"ensembles[{i}]", "needs a 'tag'")
        _need(ens["tag"] in ENSEMBLE_TAGS, f"ensembles[{i}].tag", f"unknown tag {ens['tag']!r}")
        if ens["tag"] in HADAMARD_TAGS:
            _need(is_power_of_two(cfg.N), "N", "must be a power of two for Hadamard-based ensembles")
    _need(isinstance(cfg.prior, dict), "prior", "must be a mapping")
    for i, name in enumerate(prior_names(cfg)):
        path = f"prior.names[{i}]" if "names" in cfg.prior else "prior.name"
        _need(name in PRIORS, path, f"must be one of {', '.join(PRIORS)}")
    _need(cfg.sigma >= 0, "sigma", "must be nonnegative")
    _need(isinstance(cfg.regularizer, dict), "regularizer", "must be a mapping")
    _need(cfg.regularizer.get("kind", "elastic_net") in ("elastic_net", "l1", "ridge", "zero"),
          "regularizer.kind", "unsupported penalty")
    for key in ("ratio", "lambda2"):
        if key in cfg.regularizer:
            _need(cfg.regularizer[key] >= 0, f"regularizer.{key}", "must be nonnegative")
    _need(len(cfg.lambda1_grid) > 0, "lambda1_grid", "must be nonempty")
    _need(all(x >= 0 for x in cfg.lambda1_grid), "lambda1_grid", "entries must be nonnegative")
    _need(len(cfg.chi_grid) > 0, "chi_grid", "must be nonempty")
    _need(all(0 <= x <= 1 for x in cfg.chi_grid), "chi_grid", "entries must lie in [0, 1]")
    _need(cfg.trials >= 1, "trials", "must be at least 1")
    _need(cfg.iterations >= 1, "iterations", "must be at least 1")
    _need(cfg.record_every >= 1, "record_every", "must be at least 1")
    _need(cfg.bins >= 1, "bins", "must be at least 1")
    _need(len(cfg.hist_range) == 2 and cfg.hist_range[0] < cfg.hist_range[1], "hist_range",
          "must be [low, high] with low < high")
    _need(cfg.T >= 1, "T", "must be at least 1")
    _need(cfg.mc_samples >= 10_000, "mc_samples", "must be at least 1e4")
    _need(len(cfg.ks) > 0 and all(int(k) >= 1 for k in cfg.ks), "ks", "must list orders >= 1")
    _need(cfg.master_seed >= 0, "master_seed", "must be nonnegative")
    return cfg


def from_dict(d):
    """Build and validate a config; unknown or malformed fields raise :class:`ConfigError`."""
    _need(isinstance(d, dict), "<root>", "config must be a mapping")
    _need("experiment" in d, "experiment", "missing required field")
    unknown = sorted(set(d) - set(_FIELD_TYPES))
    _need(not unknown, unknown[0] if unknown else "", "unknown field")
    kw = {}
    for name, value in d.items():
        if name in ("N", "trials", "iterations", "master_seed", "record_every", "bins", "T",
                    "mc_samples"):
            kw[name] = _number(d, name, int)
        elif name in ("sigma", "lambda1", "tol", "nonzero_threshold"):
            kw[name] = _number(d, name, float)
        elif name in ("lambda1_grid", "chi_grid", "hist_range", "ks"):
            _need(isinstance(value, list), name, "expected a list")
            for i, x in enumerate(value):
                _need(isinstance(x, (int, float)) and not isinstance(x, bool), f"{name}[{i}]",
                      f"expected a number, got {x!r}")
            kw[name] = [int(x) for x in value] if name == "ks" else [float(x) for x in value]
        elif name in ("ensembles",):
            _need(isinstance(value, list), name, "expected a list")
            kw[name] = [dict(e) if isinstance(e, dict) else e for e in value]
        elif name in ("prior", "regularizer"):
            _need(isinstance(value, dict), name, "expected a mapping")
            kw[name] = dict(value)
        else:
            _need(isinstance(value, str), name, f"expected a string, got {value!r}")
            kw[name] = value
    return validate(ExperimentConfig(**kw))


def loads(text):
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<root>", f"unparseable config: {exc}") from None
    return from_dict(d)


def load(path):
    with open(path) as fh:
        return loads(fh.read())
