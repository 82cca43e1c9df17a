"""Bipartite noisy-or generative model: parameters, likelihoods, marginals, sampling.

Conditions Y_1..Y_m are latent binary causes with independent priors pi_i.
Observations X_1..X_n are binary children; each active parent fails to turn
on child j with probability failures[i, j], and an always-on noise parent
fails with probability 1 - leaks[j].  One observation column per condition is
its anchor: a corrupted copy of Y_i whose only parent is Y_i.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PROB_FLOOR = 1e-12

MODEL_FILE_VERSION = 1


def clamped_log(p: np.ndarray | float) -> np.ndarray | float:
    """log with probabilities clamped to [1e-12, 1 - 1e-12].

    Keeps gradients finite; exact -inf is reserved for pure evaluation paths
    that opt in via np.log directly.
    """
    return np.log(np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR))


class ModelValidationError(ValueError):
    """Raised when model parameters violate a structural invariant."""


@dataclass(frozen=True)
class NoiseModel:
    """Class-conditional anchor corruption rates, per condition.

    p_a1_y1[i] = P(A_i = 1 | Y_i = 1), p_a1_y0[i] = P(A_i = 1 | Y_i = 0).
    """

    p_a1_y1: np.ndarray
    p_a1_y0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p_a1_y1", np.asarray(self.p_a1_y1, dtype=float))
        object.__setattr__(self, "p_a1_y0", np.asarray(self.p_a1_y0, dtype=float))
        if self.p_a1_y1.shape != self.p_a1_y0.shape:
            raise ModelValidationError("noise rate vectors must have equal length")
        for name in ("p_a1_y1", "p_a1_y0"):
            v = getattr(self, name)
            if np.any((v < 0) | (v > 1)):
                raise ModelValidationError(f"{name} outside [0,1]")

    @property
    def m(self) -> int:
        return self.p_a1_y1.shape[0]

    def identifiable(self) -> np.ndarray:
        """Boolean mask of conditions whose noise matrix is invertible.

        Requires P(A=1|Y=1) + (1 - P(A=1|Y=0)) > 1, i.e. the anchor carries
        signal about its condition.
        """
        return self.p_a1_y1 + (1.0 - self.p_a1_y0) > 1.0

    @staticmethod
    def noiseless(m: int) -> "NoiseModel":
        return NoiseModel(np.ones(m), np.zeros(m))

    def to_dict(self) -> dict:
        return {"p_a1_y1": self.p_a1_y1.tolist(), "p_a1_y0": self.p_a1_y0.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "NoiseModel":
        return NoiseModel(np.asarray(d["p_a1_y1"]), np.asarray(d["p_a1_y0"]))


@dataclass(frozen=True)
class ModelParams:
    """All generative parameters of the bipartite noisy-or network.

    Immutable after construction; every operation on it is pure, so instances
    are safe to share across worker threads.
    """

    priors: np.ndarray            # (m,)
    failures: np.ndarray          # (m, n)
    leaks: np.ndarray             # (n,)
    anchor_index: np.ndarray      # (m,) observation column of each anchor
    noise: NoiseModel | None = None
    condition_names: tuple[str, ...] = ()
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "priors", np.asarray(self.priors, dtype=float))
        object.__setattr__(self, "failures", np.asarray(self.failures, dtype=float))
        object.__setattr__(self, "leaks", np.asarray(self.leaks, dtype=float))
        object.__setattr__(self, "anchor_index", np.asarray(self.anchor_index, dtype=int))
        if not self.condition_names:
            object.__setattr__(
                self, "condition_names", tuple(f"condition_{i}" for i in range(self.m))
            )
        if not self.feature_names:
            object.__setattr__(
                self, "feature_names", tuple(f"feature_{j}" for j in range(self.n))
            )
        self.validate()

    @property
    def m(self) -> int:
        return self.priors.shape[0]

    @property
    def n(self) -> int:
        return self.leaks.shape[0]

    def validate(self) -> None:
        m, n = self.m, self.n
        if self.failures.shape != (m, n):
            raise ModelValidationError(
                f"failures shape {self.failures.shape} != ({m}, {n})"
            )
        for name in ("priors", "failures", "leaks"):
            v = getattr(self, name)
            if np.any((v < 0) | (v > 1)) or not np.all(np.isfinite(v)):
                raise ModelValidationError(f"{name} outside [0,1]")
        if self.anchor_index.shape != (m,):
            raise ModelValidationError("anchor_index must have one entry per condition")
        if np.any((self.anchor_index < 0) | (self.anchor_index >= n)):
            raise ModelValidationError("anchor_index out of range")
        if len(set(self.anchor_index.tolist())) != m:
            raise ModelValidationError("anchor_index must be injective")
        # Single-parent constraint: an anchor column may only be caused by its
        # own condition, so every other failure entry in that column is 1.
        for i, j in enumerate(self.anchor_index):
            others = np.delete(self.failures[:, j], i)
            if others.size and not np.allclose(others, 1.0):
                raise ModelValidationError(
                    f"anchor column {j} has a non-unit failure from a foreign condition"
                )
        if len(self.condition_names) != m or len(self.feature_names) != n:
            raise ModelValidationError("name lists do not match m / n")
        if self.noise is not None and self.noise.m != m:
            raise ModelValidationError("noise model size mismatch")

    # ------------------------------------------------------------------
    # serialization

    def to_dict(self, sparse_threshold: int = 10000) -> dict:
        d = {
            "version": MODEL_FILE_VERSION,
            "m": self.m,
            "n": self.n,
            "condition_names": list(self.condition_names),
            "feature_names": list(self.feature_names),
            "priors": self.priors.tolist(),
            "leaks": self.leaks.tolist(),
            "anchor_index": self.anchor_index.tolist(),
            "noise_model": self.noise.to_dict() if self.noise is not None else None,
        }
        # Columns are mostly f == 1 in large sparse models; triplets store the
        # exceptions only.
        nondefault = np.argwhere(self.failures != 1.0)
        if self.n >= sparse_threshold and nondefault.shape[0] < self.m * self.n // 3:
            d["failures"] = {
                "format": "sparse",
                "default": 1.0,
                "rows": nondefault[:, 0].tolist(),
                "cols": nondefault[:, 1].tolist(),
                "values": self.failures[nondefault[:, 0], nondefault[:, 1]].tolist(),
            }
        else:
            d["failures"] = self.failures.tolist()
        return d

    @staticmethod
    def from_dict(d: dict) -> "ModelParams":
        if d.get("version") != MODEL_FILE_VERSION:
            raise ModelValidationError(f"unsupported model file version {d.get('version')}")
        m, n = d["m"], d["n"]
        raw = d["failures"]
        if isinstance(raw, dict):
            failures = np.full((m, n), float(raw.get("default", 1.0)))
            failures[raw["rows"], raw["cols"]] = raw["values"]
        else:
            failures = np.asarray(raw, dtype=float).reshape(m, n)
        noise = d.get("noise_model")
        return ModelParams(
            priors=np.asarray(d["priors"]),
            failures=failures,
            leaks=np.asarray(d["leaks"]),
            anchor_index=np.asarray(d["anchor_index"]),
            noise=NoiseModel.from_dict(noise) if noise else None,
            condition_names=tuple(d["condition_names"]),
            feature_names=tuple(d["feature_names"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @staticmethod
    def load(path: str | Path) -> "ModelParams":
        return ModelParams.from_dict(json.loads(Path(path).read_text()))

    def content_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]


@dataclass
class PatientRecord:
    """One visit: binary features x, anchor slice a, optional true labels y."""

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray | None = None
    id: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int8)
        self.a = np.asarray(self.a, dtype=np.int8)
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int8)


def check_anchor_consistency(record: PatientRecord, params: ModelParams) -> bool:
    return bool(np.array_equal(record.a, record.x[params.anchor_index]))


# ----------------------------------------------------------------------
# likelihoods and marginals


def prior_logprob(y: np.ndarray, params: ModelParams) -> float:
    """log P(Y = y) under independent Bernoulli priors.

    Pure evaluation path: may return -inf when a degenerate prior conflicts
    with y.
    """
    y = np.asarray(y)
    if y.shape != (params.m,):
        raise ValueError(f"y has length {y.shape}, expected ({params.m},)")
    with np.errstate(divide="ignore"):
        terms = np.where(y == 1, np.log(params.priors), np.log1p(-params.priors))
    return float(terms.sum())


def cond_prob_x0(j: int, y: np.ndarray, params: ModelParams) -> float:
    """P(X_j = 0 | Y = y) = (1 - l_j) * prod_i f_ij ** y_i."""
    if not 0 <= j < params.n:
        raise IndexError(f"observation index {j} out of range")
    y = np.asarray(y)
    if y.shape != (params.m,):
        raise ValueError(f"y has length {y.shape}, expected ({params.m},)")
    active = y == 1
    return float((1.0 - params.leaks[j]) * np.prod(params.failures[active, j]))


def all_cond_prob_x0(y: np.ndarray, params: ModelParams) -> np.ndarray:
    """Vector of P(X_j = 0 | Y = y) over all observations."""
    active = np.asarray(y) == 1
    return (1.0 - params.leaks) * np.prod(params.failures[active, :], axis=0)


def complete_loglik(x: np.ndarray, y: np.ndarray, params: ModelParams) -> float:
    """log P(x, y) of the fully specified joint, with clamped logs."""
    x = np.asarray(x)
    if x.shape != (params.n,):
        raise ValueError(f"x has length {x.shape}, expected ({params.n},)")
    q = all_cond_prob_x0(y, params)
    obs_terms = clamped_log(np.where(x == 1, 1.0 - q, q))
    return prior_logprob(y, params) + float(np.sum(obs_terms))


def quickscore_marginal(j: int, params: ModelParams) -> float:
    """Closed-form marginal P(X_j = 0) for independent noisy-or parents."""
    if not 0 <= j < params.n:
        raise IndexError(f"observation index {j} out of range")
    pi = params.priors
    return float(
        (1.0 - params.leaks[j]) * np.prod(1.0 - pi + pi * params.failures[:, j])
    )


def quickscore_marginal_all(params: ModelParams) -> np.ndarray:
    pi = params.priors[:, None]
    return (1.0 - params.leaks) * np.prod(1.0 - pi + pi * params.failures, axis=0)


# ----------------------------------------------------------------------
# forward sampling


def sample_record(
    params: ModelParams, noise: NoiseModel, rng: np.random.Generator | int
) -> PatientRecord:
    """Draw one record from the generative model, then corrupt anchors.

    Anchor columns are overwritten with a draw from the corruption process
    (the anchor's sole parent is its condition, and its conditional is exactly
    the noise model), so the generator stays consistent with the anchor
    assumption. y is retained for synthetic/oracle use.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    y = (rng.random(params.m) < params.priors).astype(np.int8)
    q = all_cond_prob_x0(y, params)
    x = (rng.random(params.n) >= q).astype(np.int8)
    p_a1 = np.where(y == 1, noise.p_a1_y1, noise.p_a1_y0)
    a = (rng.random(params.m) < p_a1).astype(np.int8)
    x[params.anchor_index] = a
    return PatientRecord(x=x, a=a, y=y)


def sample_dataset_arrays(
    params: ModelParams, noise: NoiseModel, n_records: int, rng: np.random.Generator | int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized batch sampler; returns (X, A, Y) with shapes (N, n), (N, m), (N, m)."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    N = n_records
    Y = (rng.random((N, params.m)) < params.priors).astype(np.int8)
    # log q per record via matmul; exp is safe because failures > 0 entries
    # dominate and f == 0 maps to -inf -> q == 0.
    with np.errstate(divide="ignore"):
        logf = np.log(params.failures)
    s = Y @ np.where(np.isfinite(logf), logf, 0.0)
    zero_hit = (Y @ (~np.isfinite(logf)).astype(np.int8)) > 0
    q = np.where(zero_hit, 0.0, (1.0 - params.leaks) * np.exp(s))
    X = (rng.random((N, params.n)) >= q).astype(np.int8)
    p_a1 = np.where(Y == 1, noise.p_a1_y1, noise.p_a1_y0)
    A = (rng.random((N, params.m)) < p_a1).astype(np.int8)
    X[:, params.anchor_index] = A
    return X, A, Y


def sample_dataset(
    params: ModelParams, noise: NoiseModel, n_records: int, rng: np.random.Generator | int
) -> list[PatientRecord]:
    X, A, Y = sample_dataset_arrays(params, noise, n_records, rng)
    return [
        PatientRecord(x=X[k], a=A[k], y=Y[k], id=f"rec{k:06d}")
        for k in range(n_records)
    ]


def enumerate_assignments(m: int) -> np.ndarray:
    """All 2^m binary vectors of length m, lexicographic, as an array."""
    grid = np.indices((2,) * m).reshape(m, -1).T
    return grid.astype(np.int8)
