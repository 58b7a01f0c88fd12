"""
Pytest configuration and shared fixtures for the two-point regularization test suite.
"""

import json
import os
import sys
from typing import Any, Dict, Optional

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from twopoint.cli import add_noise
from twopoint.config import merge_config, PRESETS
from twopoint.operators import make_deconv, make_diagexp
from twopoint.penalty import power_norm
from twopoint.solver import SolverConfig

# Solver constants used on the deconvolution problem (its estimated
# stability constant is large, so the alpha term is switched off)
DECONV_SOLVER = dict(theta1=0.6, theta3=1e4, alpha_strategy="zero")


@pytest.fixture
def rng():
    """Seeded generator; every test gets the same stream."""
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def deconv_setup():
    """Power-norm p = 2 penalty and calibrated Gaussian deconvolution, n = 64, |F(u_dagger)| about 2.3."""
    pen = power_norm(64, 2.0, rng=np.random.default_rng(0))
    fp = make_deconv(64, 0.02, penalty=pen, amplitude=10.0, samples=300, seed=0)
    return pen, fp


@pytest.fixture(scope="session")
def diagexp_setup():
    """Power-norm p = 2 penalty and calibrated diagonal exponential problem, n = 32, sigma = 30."""
    pen = power_norm(32, 2.0, rng=np.random.default_rng(0))
    fp = make_diagexp(32, penalty=pen, eps=0.15, amplitude=0.5, samples=300, seed=0)
    return pen, fp


@pytest.fixture(scope="session")
def deconv_config():
    """Solver factory for the deconvolution problem."""

    def _config(**overrides):
        return SolverConfig(**{**DECONV_SOLVER, **overrides})

    return _config


@pytest.fixture(scope="session")
def diagexp_config():
    """Solver factory for the diagonal exponential problem (library defaults)."""

    def _config(**overrides):
        return SolverConfig(**overrides)

    return _config


@pytest.fixture
def noisy_data():
    """v_delta at exactly distance delta from the exact data of a problem."""

    def _noisy(fp, delta, seed=0):
        return add_noise(fp.exact_data(), delta, seed, fp.data_space)

    return _noisy


@pytest.fixture
def write_config(tmp_path):
    """Write a merged experiment file under tmp_path and return its path."""

    def _write(
        preset: str = "default",
        overrides: Optional[Dict[str, Any]] = None,
        name: str = "experiment.json",
    ):
        doc = merge_config(PRESETS[preset])
        for section, values in (overrides or {}).items():
            doc[section].update(values)
        doc["experiment"]["output_dir"] = str(tmp_path / "results")
        path = tmp_path / name
        path.write_text(json.dumps(doc, indent=2))
        return path

    return _write
