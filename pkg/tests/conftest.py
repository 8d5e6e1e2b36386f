"""Shared pytest fixtures for mapweave tests."""

import numpy as np
import pytest

from mapweave.config import Config
from mapweave.core.geometry import BevWindow
from mapweave.core.pipeline import build_parameters
from mapweave.core.world import generate_scenario

TINY_CONFIG = {
    "grid": {"x_min": -2.0, "x_max": 2.0, "y_min": -2.0, "y_max": 2.0, "resolution": 0.5},
    "model": {
        "num_queries": 4,
        "num_points": 6,
        "channels": 4,
        "saqg_layers": 1,
        "decoder_blocks": 1,
        "ffn_hidden": 8,
        "history_frames": 2,
        "stfg_hidden": 8,
        "stfg_hidden_layers": 1,
        "k_max": 16,
    },
    "world": {
        "frames": 3,
        "speed": 1.0,
        "n_lanes": 1,
        "lane_width": 2.0,
        "n_crossings": 0,
        "patch_cells": 2,
        "signal_channels_per_class": 1,
        "noise": 0.05,
        "dropout": 0.0,
    },
    "training": {"epochs": 1, "seed": 0},
    "processing": {"worker_count": 2},
}


@pytest.fixture
def tiny_config():
    """8x8 grid, C=4, N_q=4: small enough for gradient checks."""
    return Config(**TINY_CONFIG)


@pytest.fixture
def desk_config():
    """Default (desk-scale) configuration."""
    return Config()


@pytest.fixture
def tiny_window(tiny_config):
    """The 8x8 window of ``tiny_config``."""
    return BevWindow.from_config(tiny_config.grid)


@pytest.fixture
def tiny_params(tiny_config):
    """Freshly initialized parameters for ``tiny_config``."""
    return build_parameters(tiny_config)


@pytest.fixture
def straight_scenario(tiny_config):
    """Three-frame straight-road scenario on the tiny grid."""
    return generate_scenario(
        tiny_config.world,
        tiny_config.grid,
        seed=3,
        n_points=tiny_config.model.num_points,
        channels=tiny_config.model.channels,
    )


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(1234)
