"""Shared fixtures: small random models with valid anchor structure."""

import numpy as np
import pytest

from noisyor.model import ModelParams, NoiseModel


def random_model(
    m: int,
    n: int,
    rng: np.random.Generator,
    p_a1_y1: float = 0.8,
    p_a1_y0: float = 0.1,
) -> ModelParams:
    """Random valid model; the last m observation columns are the anchors."""
    assert n >= m
    anchor_index = np.arange(n - m, n)
    priors = rng.uniform(0.1, 0.6, size=m)
    failures = np.ones((m, n))
    failures[:, : n - m] = rng.uniform(0.1, 0.9, size=(m, n - m))
    leaks = np.zeros(n)
    leaks[: n - m] = rng.uniform(0.0, 0.2, size=n - m)
    noise = NoiseModel(np.full(m, p_a1_y1), np.full(m, p_a1_y0))
    failures[np.arange(m), anchor_index] = 1.0 - noise.p_a1_y1
    leaks[anchor_index] = noise.p_a1_y0
    return ModelParams(
        priors=priors,
        failures=failures,
        leaks=leaks,
        anchor_index=anchor_index,
        noise=noise,
    )


@pytest.fixture
def tiny_model():
    return random_model(2, 4, np.random.default_rng(42))


@pytest.fixture
def small_model():
    return random_model(3, 6, np.random.default_rng(7))
