"""Held-out tag task, its metrics, and the comparison baselines.

Baselines mirror the evaluation protocol: a naive model that trusts anchors as
labels, per-condition noise-corrected linear classifiers, and an oracle MLE on
true labels as the upper bound.  All noisy-or models are ranked on the task
via exact last-tag inference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

from .data import Dataset
from .infer import exact_last_tag
from .model import ModelParams, NoiseModel, clamped_log
from .moments import estimate_prior

LOGIT_EPS = 1e-6


@dataclass
class TagTaskInstance:
    record_idx: int
    known: tuple[int, ...]
    target: int


@dataclass
class Metrics:
    accuracy: float
    top5: float
    mrr: float
    n_instances: int

    def to_dict(self) -> dict:
        return asdict(self)


def make_task_instances(
    dataset: Dataset, rng: np.random.Generator | int
) -> list[TagTaskInstance]:
    """One instance per record with >= 2 true conditions: remove one positive
    tag uniformly at random (seeded); the rest are given as known."""
    if dataset.Y is None:
        raise ValueError("task instances need true labels")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    instances = []
    for k in range(len(dataset)):
        pos = np.flatnonzero(dataset.Y[k] == 1)
        if pos.size < 2:
            continue
        target = int(rng.choice(pos))
        known = tuple(int(i) for i in pos if i != target)
        instances.append(TagTaskInstance(record_idx=k, known=known, target=target))
    return instances


def evaluate_model(
    predict_fn: Callable[[TagTaskInstance], np.ndarray],
    instances: list[TagTaskInstance],
) -> Metrics:
    """predict_fn returns a full ranking (best first) of the unknown tags."""
    if not instances:
        raise ValueError("no task instances to evaluate")
    hits1 = hits5 = 0
    rr = 0.0
    for inst in instances:
        ranking = np.asarray(predict_fn(inst))
        where = np.flatnonzero(ranking == inst.target)
        if where.size == 0:
            raise ValueError("predict_fn omitted the target from its ranking")
        rank = int(where[0]) + 1
        hits1 += rank == 1
        # With fewer than 5 candidates any appearance counts as a top-5 hit.
        hits5 += rank <= 5
        rr += 1.0 / rank
    n = len(instances)
    return Metrics(accuracy=hits1 / n, top5=hits5 / n, mrr=rr / n, n_instances=n)


def noisyor_predict_fn(
    params: ModelParams, dataset: Dataset
) -> Callable[[TagTaskInstance], np.ndarray]:
    """Ranking of unknown tags by exact last-tag probabilities; ties break by
    condition index."""

    def predict(inst: TagTaskInstance) -> np.ndarray:
        cands, probs, _ = exact_last_tag(params, dataset.X[inst.record_idx], inst.known)
        order = np.lexsort((cands, -probs))
        return cands[order]

    return predict


# ----------------------------------------------------------------------
# fully observed noisy-or MLE (shared by the naive and oracle baselines)


def fit_observed_mle(
    X: np.ndarray,
    Y: np.ndarray,
    anchor_index: np.ndarray,
    init: tuple[np.ndarray, np.ndarray] | None = None,
    tol: float = 1e-6,
    max_iter: int = 500,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Maximize the fully observed complete log-likelihood over failures and
    leaks (sigmoid-reparametrized), holding the single-parent anchor structure.

    Returns (failures, leaks, mean log-likelihood).  Priors have the closed
    form mean(Y) and are not handled here.
    """
    N, n = X.shape
    m = Y.shape[1]
    trainable = np.ones((m, n), dtype=bool)
    for i, j in enumerate(anchor_index):
        trainable[:, j] = False
        trainable[i, j] = True
    tr_idx = np.flatnonzero(trainable.ravel())
    Yf = Y.astype(float)
    Xf = X.astype(float)

    if init is None:
        f0 = np.full((m, n), 0.8)
        l0 = np.full(n, 0.05)
    else:
        f0, l0 = init
    tf0 = logit(np.clip(f0, LOGIT_EPS, 1 - LOGIT_EPS)).ravel()[tr_idx]
    tl0 = logit(np.clip(l0, LOGIT_EPS, 1 - LOGIT_EPS))

    def unpack(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        f = np.ones(m * n)
        f[tr_idx] = expit(v[: tr_idx.size])
        return f.reshape(m, n), expit(v[tr_idx.size :])

    def neg_ll_and_grad(v: np.ndarray):
        f, l = unpack(v)
        logf = np.where(f == 1.0, 0.0, clamped_log(f))
        s = Yf @ logf
        q = np.clip((1.0 - l) * np.exp(s), 1e-12, 1.0 - 1e-12)
        ll = np.mean(
            np.sum(np.where(Xf == 1, np.log1p(-q), np.log(q)), axis=1)
        )
        ratio = q / (1.0 - q)
        G = np.where(Xf == 1, -ratio, 1.0)                    # (N, n)
        grad_f = (Yf.T @ G) / N * (1.0 - f)                    # d ll / d theta_f
        grad_l = np.mean(np.where(Xf == 1, l * ratio, -l), axis=0)
        grad = np.concatenate([grad_f.ravel()[tr_idx], grad_l])
        return -ll, -grad

    res = minimize(
        neg_ll_and_grad,
        np.concatenate([tf0, tl0]),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "ftol": tol * 1e-3, "gtol": 1e-9},
    )
    f, l = unpack(res.x)
    return f, l, -float(res.fun)


def naive_labels_train(
    dataset: Dataset, noise: NoiseModel, anchor_index: np.ndarray | None = None
) -> ModelParams:
    """Treat anchors as true labels, fit the fully observed MLE, then edit the
    anchor failure/leak entries back to the true noise rates."""
    m, n = dataset.m, dataset.n
    if anchor_index is None:
        anchor_index = np.arange(n - m, n)
    priors = dataset.A.mean(axis=0).astype(float)
    degenerate = (priors == 0.0) | (priors == 1.0)
    if degenerate.any():
        priors = np.clip(priors, 1e-4, 1 - 1e-4)
    failures, leaks, _ = fit_observed_mle(dataset.X, dataset.A, anchor_index)
    failures = failures.copy()
    leaks = leaks.copy()
    failures[np.arange(m), anchor_index] = 1.0 - noise.p_a1_y1
    leaks[anchor_index] = noise.p_a1_y0
    return ModelParams(
        priors=priors,
        failures=failures,
        leaks=leaks,
        anchor_index=anchor_index,
        noise=noise,
    )


def oracle_mle_train(
    dataset: Dataset, anchor_index: np.ndarray | None = None,
    noise: NoiseModel | None = None,
) -> ModelParams:
    """Fully observed MLE on the true labels (synthetic corpora only)."""
    if dataset.Y is None:
        raise ValueError("oracle MLE needs true labels")
    m, n = dataset.m, dataset.n
    if anchor_index is None:
        anchor_index = np.arange(n - m, n)
    priors = np.clip(dataset.Y.mean(axis=0).astype(float), 1e-4, 1 - 1e-4)
    failures, leaks, _ = fit_observed_mle(dataset.X, dataset.Y, anchor_index)
    return ModelParams(
        priors=priors,
        failures=failures,
        leaks=leaks,
        anchor_index=anchor_index,
        noise=noise,
    )


# ----------------------------------------------------------------------
# noise-tolerant per-condition classifiers


@dataclass
class NoiseTolerantModel:
    """Per-condition linear classifiers trained with the unbiased
    noise-corrected log loss; scores are P(Y_i = 1 | x)-style logits."""

    weights: np.ndarray            # (m, n + 1); own-anchor column zeroed
    anchor_index: np.ndarray
    p_y1_given_a1: np.ndarray      # used when the anchor itself is observed on
    noise: NoiseModel

    def scores(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        xb = np.concatenate([x, [1.0]])
        s = expit(self.weights @ xb)
        on = x[self.anchor_index] == 1
        return np.where(on, self.p_y1_given_a1, s)


def corrected_loss_terms(
    z: np.ndarray, a: np.ndarray, rho_pos: float, rho_neg: float, clip_at: float = -50.0
) -> tuple[np.ndarray, np.ndarray]:
    """Unbiased noise-corrected log loss and its d/dz, elementwise.

    rho_pos = P(A=0|Y=1), rho_neg = P(A=1|Y=0).  Per-record terms are clipped
    below at clip_at to bound the variance of the unbounded corrected loss;
    clipped records contribute no gradient.
    """
    D = 1.0 - rho_pos - rho_neg
    if D <= 0:
        raise ValueError("rho_pos + rho_neg >= 1: noise rates unidentifiable")
    loss1 = np.logaddexp(0.0, -z)   # -log sigma(z)
    loss0 = np.logaddexp(0.0, z)    # -log (1 - sigma(z))
    alpha = np.where(a == 1, (1.0 - rho_neg) / D, -rho_neg / D)
    beta = np.where(a == 1, -rho_pos / D, (1.0 - rho_pos) / D)
    loss = alpha * loss1 + beta * loss0
    s = expit(z)
    grad = alpha * (s - 1.0) + beta * s
    clipped = loss < clip_at
    return np.where(clipped, clip_at, loss), np.where(clipped, 0.0, grad)


def noise_tolerant_train(
    dataset: Dataset,
    noise: NoiseModel,
    anchor_index: np.ndarray | None = None,
    l2: float = 1e-4,
    max_iter: int = 300,
) -> NoiseTolerantModel:
    """One linear classifier per condition on all features except that
    condition's own anchor column."""
    m, n = dataset.m, dataset.n
    if anchor_index is None:
        anchor_index = np.arange(n - m, n)
    Xb = np.concatenate([dataset.X.astype(float), np.ones((len(dataset), 1))], axis=1)
    weights = np.zeros((m, n + 1))
    p_y1_a1 = np.empty(m)
    for i in range(m):
        rho_pos = 1.0 - float(noise.p_a1_y1[i])
        rho_neg = float(noise.p_a1_y0[i])
        a = dataset.A[:, i].astype(float)
        own = int(anchor_index[i])
        Xi = Xb.copy()
        Xi[:, own] = 0.0

        def obj(w):
            z = Xi @ w
            loss, gz = corrected_loss_terms(z, a, rho_pos, rho_neg)
            val = loss.mean() + 0.5 * l2 * np.dot(w[:-1], w[:-1])
            grad = Xi.T @ gz / len(a)
            grad[:-1] += l2 * w[:-1]
            return val, grad

        res = minimize(obj, np.zeros(n + 1), jac=True, method="L-BFGS-B",
                       options={"maxiter": max_iter})
        w = res.x
        w[own] = 0.0
        weights[i] = w

        p_a1 = float(a.mean())
        pi = estimate_prior(float(noise.p_a1_y1[i]), rho_neg, p_a1)
        p_y1_a1[i] = (
            pi * float(noise.p_a1_y1[i]) / p_a1 if p_a1 > 0 else pi
        )
    return NoiseTolerantModel(
        weights=weights,
        anchor_index=anchor_index,
        p_y1_given_a1=np.clip(p_y1_a1, 0.0, 1.0),
        noise=noise,
    )


def noise_tolerant_predict_fn(
    model: NoiseTolerantModel, dataset: Dataset
) -> Callable[[TagTaskInstance], np.ndarray]:
    def predict(inst: TagTaskInstance) -> np.ndarray:
        scores = model.scores(dataset.X[inst.record_idx])
        cands = np.array(
            [i for i in range(model.anchor_index.size) if i not in inst.known]
        )
        order = np.lexsort((cands, -scores[cands]))
        return cands[order]

    return predict


# ----------------------------------------------------------------------
# report


def results_report(rows: list[tuple[str, Metrics]]) -> dict:
    """Table-shaped report: Model, Accuracy, Top 5, MRR."""
    return {
        "columns": ["Model", "Accuracy", "Top 5", "MRR"],
        "rows": [
            {"Model": name, "Accuracy": m.accuracy, "Top 5": m.top5, "MRR": m.mrr,
             "n_instances": m.n_instances}
            for name, m in rows
        ],
    }


def save_report(path: str | Path, rows: list[tuple[str, Metrics]]) -> None:
    report = results_report(rows)
    path = Path(path)
    if path.suffix == ".csv":
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(report["columns"])
            for r in report["rows"]:
                writer.writerow([r["Model"], r["Accuracy"], r["Top 5"], r["MRR"]])
    else:
        path.write_text(json.dumps(report, indent=2))
