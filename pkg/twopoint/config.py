"""
Experiment configuration: a JSON document merged over ``DEFAULT_CONFIG``.
"""

import copy
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .penalty import POWER_NORM, QUADRATIC_L1, penalty_from_config
from .operators import problem_from_config
from .solver import SolverConfig

logger = logging.getLogger(__name__)

CONFIG_DIR = Path("configs")
DEFAULT_CONFIG_FILE = CONFIG_DIR / "default.json"
OUTPUT_DIR_ENV = "TWOPOINT_OUTPUT_DIR"

# Default experiment (nonlinear diagonal problem, backtracking lambda)
DEFAULT_CONFIG = {
    "problem": {
        "kind": "diagexp",
        "n": 32,
        "kernel_width": 0.02,
        "eps": None,
        "amplitude": None,
        "scales": None,
        "samples": 1000,
        "eta": None,
        "C0": None,
        "C_stab": None,
    },
    "penalty": {
        "kind": POWER_NORM,
        "p": 2.0,
        "c0": None,
        "beta": 0.0,
    },
    "space": {
        "r_U": 2.0,
        "r_V": 2.0,
        "s": 2.0,
    },
    "solver": {
        "tau": 5.0,
        "theta1": 0.2,
        "theta2bar": 0.1,
        "theta3": 1.0,
        "theta4": 0.05,
        "zeta": 2.0,
        "sigma_nesterov": 3.0,
        "lambda_strategy": "dbts",
        "alpha_strategy": "rule",
        "k_max": 5000,
        "jmax": 5,
        "h_scale": 1.0,
        "alpha_summable_scale": 1.0,
    },
    "experiment": {
        "deltas": [0.1, 0.01, 0.001],
        "seed": 0,
        "output_dir": "results",
        "workers": 1,
    },
}


class ConfigError(ValueError):
    """Configuration file cannot be parsed or fails validation."""


# Named starting points, stored as overrides of DEFAULT_CONFIG
PRESETS = {
    "default": {},
    "deconv": {
        "problem": {"kind": "deconv", "n": 64, "kernel_width": 0.02, "amplitude": 10.0},
        "solver": {"theta1": 0.6, "theta3": 1e4, "alpha_strategy": "zero"},
        "experiment": {"output_dir": "results/deconv"},
    },
}


def merge_config(saved):
    """Deep-merge ``saved`` sections over the defaults, rejecting unknown keys"""
    if not isinstance(saved, dict):
        raise ConfigError("Configuration must be a JSON object of sections")
    config = copy.deepcopy(DEFAULT_CONFIG)
    for section, values in saved.items():
        if section not in config:
            raise ConfigError(f"Unknown configuration section: {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"Section {section!r} must be an object")
        unknown = set(values) - set(config[section])
        if unknown:
            raise ConfigError(f"Unknown keys in section {section!r}: {sorted(unknown)}")
        config[section].update(values)
    return config


def preset_config(name):
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return merge_config(PRESETS[name])


class ConfigManager:
    """Loads and saves an experiment configuration file"""

    def __init__(self, config_file=DEFAULT_CONFIG_FILE, preset="default"):
        self.config_file = Path(config_file)
        self.preset = preset
        self.config = self.load_config()

    def load_config(self):
        """Load configuration from file or create default"""
        if not self.config_file.exists():
            config = preset_config(self.preset)
            self.save_config(config)
            return config
        try:
            with open(self.config_file, "r") as f:
                saved_config = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Failed to load config {self.config_file}: {e}")
            raise ConfigError(f"Cannot read {self.config_file}: {e}") from e
        return merge_config(saved_config)

    def save_config(self, config=None):
        """Save configuration to file"""
        if config is None:
            config = self.config
        try:
            self.config_file.parent.mkdir(parents=True, exist_ok=True)
            with open(self.config_file, "w") as f:
                json.dump(config, f, indent=2)
                f.write("\n")
            logger.info(f"Configuration saved to {self.config_file}")
            return True
        except OSError as e:
            logger.error(f"Failed to save config: {e}")
            return False

    def get(self, section, key=None):
        """Get configuration value"""
        if key is None:
            return self.config.get(section, {})
        return self.config.get(section, {}).get(key)

    def experiment(self):
        return ExperimentConfig.from_document(self.config)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description"""

    problem: dict
    penalty: dict
    r_U: float
    r_V: float
    s: float
    solver: SolverConfig
    deltas: tuple
    seed: int
    output_dir: Path
    workers: int = 1

    @classmethod
    def from_document(cls, doc):
        space = doc["space"]
        exp = doc["experiment"]
        try:
            solver = SolverConfig(s=float(space["s"]), **doc["solver"])
            deltas = tuple(float(d) for d in exp["deltas"])
            seed = exp["seed"]
            workers = exp["workers"]
            r_U, r_V = float(space["r_U"]), float(space["r_V"])
            p = float(doc["penalty"]["p"])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid configuration: {e}") from e

        if not deltas:
            raise ConfigError("experiment.deltas must list at least one noise level")
        if any(d < 0 for d in deltas):
            raise ConfigError("Noise levels must be nonnegative")
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError(f"experiment.seed must be an integer, got {seed!r}")
        if not isinstance(workers, int) or workers < 1:
            raise ConfigError(f"experiment.workers must be a positive integer, got {workers!r}")
        if r_V <= 1:
            raise ConfigError(f"space.r_V must be > 1, got {r_V}")

        pen = doc["penalty"]
        if pen["kind"] == POWER_NORM and r_U != p:
            raise ConfigError(f"power-norm penalty needs r_U = p, got r_U={r_U}, p={pen['p']}")
        if pen["kind"] == QUADRATIC_L1 and r_U != 2.0:
            raise ConfigError("quadratic-l1 penalty needs r_U = 2")
        if pen["kind"] not in (POWER_NORM, QUADRATIC_L1):
            raise ConfigError(f"Unknown penalty kind: {pen['kind']!r}")
        if doc["problem"]["kind"] not in ("deconv", "diagexp"):
            raise ConfigError(f"Unknown problem kind: {doc['problem']['kind']!r}")

        output_dir = Path(os.environ.get(OUTPUT_DIR_ENV) or exp["output_dir"])
        return cls(
            problem=dict(doc["problem"]),
            penalty=dict(pen),
            r_U=r_U,
            r_V=r_V,
            s=solver.s,
            solver=solver,
            deltas=deltas,
            seed=seed,
            output_dir=output_dir,
            workers=workers,
        )

    def build(self):
        """Penalty and calibrated problem for this experiment"""
        rng = np.random.default_rng(self.seed)
        pen = penalty_from_config(self.penalty, int(self.problem.get("n") or 32), rng=rng)
        fp = problem_from_config(self.problem, pen, data_exponent=self.r_V, seed=self.seed)
        return pen, fp


def load_experiment(path):
    """Read, merge and validate the experiment file at ``path``"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Configuration file not found: {path}")
    return ConfigManager(path).experiment()
