"""Synthetic corpora drawn from known ground-truth models.

Every estimator in the package is validated against data generated here,
since the real clinical corpus is not available at desk scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .data import Dataset
from .model import ModelParams, NoiseModel, sample_dataset_arrays


@dataclass
class ScenarioSpec:
    """Knobs for the random ground-truth model and corpus size."""

    m: int = 10
    n: int = 100
    prior_range: tuple[float, float] = (0.15, 0.35)
    failure_density: float = 0.15
    failure_range: tuple[float, float] = (0.25, 0.8)
    leak_range: tuple[float, float] = (0.01, 0.05)
    anchor_fn_rate: float = 0.20   # P(A=0 | Y=1)
    anchor_fp_rate: float = 0.05   # P(A=1 | Y=0)
    n_records: int = 20000
    seed: int = 0
    min_conditions: int = 2

    def validate(self) -> None:
        if self.n < self.m:
            raise ValueError("need at least one observation column per condition")
        for lo, hi in (self.prior_range, self.failure_range, self.leak_range):
            if not (0 <= lo <= hi <= 1):
                raise ValueError("ranges must lie within [0,1]")
        if not 0 < self.failure_density <= 1:
            raise ValueError("failure density must be in (0,1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ScenarioSpec":
        spec = ScenarioSpec(**d)
        for name in ("prior_range", "failure_range", "leak_range"):
            setattr(spec, name, tuple(getattr(spec, name)))
        return spec


def generate_ground_truth(
    spec: ScenarioSpec, rng: np.random.Generator | int | None = None
) -> tuple[ModelParams, NoiseModel]:
    """Sample a valid model with the single-parent anchor structure."""
    spec.validate()
    rng = np.random.default_rng(spec.seed if rng is None else rng)
    m, n = spec.m, spec.n
    priors = rng.uniform(*spec.prior_range, size=m)
    # The last m columns are the anchors; regular observations fill the rest.
    anchor_index = np.arange(n - m, n)
    failures = np.ones((m, n))
    edges = rng.random((m, n - m)) < spec.failure_density
    # Every condition gets at least one regular child so it is learnable.
    for i in range(m):
        if not edges[i].any():
            edges[i, rng.integers(0, n - m)] = True
    vals = rng.uniform(*spec.failure_range, size=(m, n - m))
    failures[:, : n - m] = np.where(edges, vals, 1.0)
    leaks = np.zeros(n)
    leaks[: n - m] = rng.uniform(*spec.leak_range, size=n - m)
    noise = NoiseModel(
        p_a1_y1=np.full(m, 1.0 - spec.anchor_fn_rate),
        p_a1_y0=np.full(m, spec.anchor_fp_rate),
    )
    # Anchor columns carry the corruption process itself.
    failures[np.arange(m), anchor_index] = 1.0 - noise.p_a1_y1
    leaks[anchor_index] = noise.p_a1_y0
    params = ModelParams(
        priors=priors,
        failures=failures,
        leaks=leaks,
        anchor_index=anchor_index,
        noise=noise,
    )
    return params, noise


def generate_dataset(
    params: ModelParams,
    noise: NoiseModel,
    n_records: int,
    rng: np.random.Generator | int,
) -> Dataset:
    X, A, Y = sample_dataset_arrays(params, noise, n_records, rng)
    return Dataset(X=X, A=A, Y=Y)


def cohort_filter(dataset: Dataset, min_conditions: int = 2) -> tuple[Dataset, float]:
    """Keep records with >= min_conditions true conditions; returns retention rate."""
    if dataset.Y is None:
        raise ValueError("cohort filter needs labeled records")
    keep = np.flatnonzero(dataset.Y.sum(axis=1) >= min_conditions)
    rate = len(keep) / max(len(dataset), 1)
    return dataset.subset(keep), rate


def write_ground_truth(path: str | Path, params: ModelParams, noise: NoiseModel,
                       spec: ScenarioSpec | None = None) -> None:
    doc = {"params": params.to_dict(), "noise": noise.to_dict()}
    if spec is not None:
        doc["scenario"] = spec.to_dict()
    Path(path).write_text(json.dumps(doc))


def read_ground_truth(path: str | Path) -> tuple[ModelParams, NoiseModel]:
    doc = json.loads(Path(path).read_text())
    return ModelParams.from_dict(doc["params"]), NoiseModel.from_dict(doc["noise"])
