import csv

import numpy as np
import pytest

from feedback_controls import FeedbackControl
from snse_integrator import SimConfig
from spectral_core import SpectralField
from stochastic_forcing import NoiseKind, NoiseModel


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_cfg():
    """N=2, short horizon, real initial state inside the unit V-ball."""
    u0 = SpectralField.real_from_modes(2, {(1, 0): 0.4, (1, 1): 0.1})
    return SimConfig(2, 0.5, 0.02, 0.4, stop_m=3.0, stop_mtilde=1.0, u0=u0)


@pytest.fixture
def additive_noise():
    return NoiseModel(2, NoiseKind.ADDITIVE, 0.3, 2.0, ((1, 0), (0, 1)))


@pytest.fixture
def multiplicative_noise():
    return NoiseModel(2, NoiseKind.MULTIPLICATIVE, 0.3, 2.0, ((1, 0), (0, 1), (1, 1)))


@pytest.fixture
def damping_control(small_cfg):
    return FeedbackControl.build(2, small_cfg.t_final, gains={(1, 0): -0.5, (0, 1): -0.3}, cap_k=10.0)


@pytest.fixture
def write_cfg(tmp_path):
    """Write a run config and return its path."""
    def write(text, name="run.cfg"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)
    return write


def read_csv_body(path):
    """(columns, rows) of a CSV written by main, skipping '#' metadata lines."""
    with open(path, encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def read_raw_body(path):
    with open(path, encoding="utf-8") as f:
        return "".join(line for line in f if not line.startswith("#"))
