"""Semi-supervised variational training with score-function gradients.

The recognition model is m independent logistic regressions over the centered,
padded feature vector.  Its gradient uses the likelihood-ratio estimator with
signal centering/normalization and an input-dependent baseline network; the
generative parameters get exact pathwise gradients at the sampled condition
vectors.  Priors and anchor failure/leak entries stay fixed at their
noise-rate values throughout.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from .data import Dataset
from .infer import GibbsConfig, heldout_anchor_score
from .model import ModelParams, NoiseModel, clamped_log

LOGIT_EPS = 1e-6


@dataclass
class RecognitionParams:
    """weights: (m, n+1), last column multiplies the padded 1; aux_bias shifts
    the anchor-prediction head."""

    weights: np.ndarray
    aux_bias: np.ndarray

    def copy(self) -> "RecognitionParams":
        return RecognitionParams(self.weights.copy(), self.aux_bias.copy())

    @staticmethod
    def init_random(m: int, n: int, rng: np.random.Generator) -> "RecognitionParams":
        return RecognitionParams(
            weights=rng.uniform(-0.1, 0.1, size=(m, n + 1)),
            aux_bias=np.zeros(m),
        )


@dataclass
class TrainConfig:
    lam: float = 1.0
    samples_per_gradient: int = 10
    lr_phi: float = 1e-4
    lr_theta_ratio: float = 0.2
    burn_in_epochs: int = 50
    epochs: int = 150
    minibatch: int = 64
    weight_decay: float = 0.0
    baseline_width: int = 100
    seed: int = 0
    val_records: int = 1000
    checkpoint_every: int = 10
    val_max_records: int = 300
    val_gibbs: GibbsConfig = field(
        default_factory=lambda: GibbsConfig(chains=2, burn_in=100, kept=300, seed=7)
    )

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if min(self.samples_per_gradient, self.epochs, self.minibatch) <= 0:
            raise ValueError("counts must be positive")

    @property
    def lr_theta(self) -> float:
        return self.lr_phi * self.lr_theta_ratio


@dataclass
class Checkpoint:
    epoch: int
    params: ModelParams
    phi: RecognitionParams
    val_score: float

    def save(self, prefix: str | Path) -> None:
        prefix = Path(prefix)
        meta = {
            "version": 1,
            "epoch": self.epoch,
            "val_score": self.val_score,
            "model": self.params.to_dict(),
        }
        prefix.with_suffix(".json").write_text(json.dumps(meta))
        np.savez(
            prefix.with_suffix(".npz"),
            phi_weights=self.phi.weights,
            phi_aux_bias=self.phi.aux_bias,
        )

    @staticmethod
    def load(prefix: str | Path) -> "Checkpoint":
        prefix = Path(prefix)
        meta = json.loads(prefix.with_suffix(".json").read_text())
        if meta.get("version") != 1:
            raise ValueError("unsupported checkpoint version")
        blob = np.load(prefix.with_suffix(".npz"))
        return Checkpoint(
            epoch=meta["epoch"],
            params=ModelParams.from_dict(meta["model"]),
            phi=RecognitionParams(blob["phi_weights"], blob["phi_aux_bias"]),
            val_score=meta["val_score"],
        )


# ----------------------------------------------------------------------
# recognition model pieces


def recognition_posterior(phi: RecognitionParams, xbar: np.ndarray) -> np.ndarray:
    """sigma(phi_i . xbar) per condition; xbar is padded with a trailing 1."""
    xbar = np.asarray(xbar)
    if xbar.shape[-1] != phi.weights.shape[1]:
        raise ValueError(
            f"input length {xbar.shape[-1]} != {phi.weights.shape[1]} (n+1)"
        )
    return expit(xbar @ phi.weights.T)


def supervised_term(
    phi: RecognitionParams, xtil: np.ndarray, a: np.ndarray
) -> float:
    """Log loss of the anchor-prediction head on one censored input."""
    z = xtil @ phi.weights.T + phi.aux_bias
    p = expit(z)
    ll = a * clamped_log(p) + (1 - a) * clamped_log(1.0 - p)
    return float(-np.sum(ll))


def elbo_estimate(
    params: ModelParams,
    phi: RecognitionParams,
    x: np.ndarray,
    S: int,
    rng: np.random.Generator | int,
    xbar: np.ndarray | None = None,
) -> float:
    """Monte Carlo ELBO for one record: mean of log P(x, y) - log q(y | xbar)."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    x = np.asarray(x)
    if xbar is None:
        xbar = np.concatenate([x.astype(float), [1.0]])
    p = recognition_posterior(phi, xbar)
    y = (rng.random((S, params.m)) < p).astype(np.int8)
    logq = np.sum(
        y * clamped_log(p) + (1 - y) * clamped_log(1.0 - p), axis=1
    )
    logp = _complete_loglik_batch(params, x[None, :], y[None, :, :])[0]
    return float(np.mean(logp - logq))


def _complete_loglik_batch(
    params: ModelParams, X: np.ndarray, Y: np.ndarray
) -> np.ndarray:
    """Clamped joint log-likelihood; X: (B, n), Y: (..., B, m) -> (..., B)."""
    logf = clamped_log(params.failures)
    logf = np.where(params.failures == 1.0, 0.0, logf)
    s = Y.astype(float) @ logf
    q = np.clip((1.0 - params.leaks) * np.exp(s), 0.0, 1.0)
    obs = clamped_log(np.where(X == 1, 1.0 - q, q)).sum(axis=-1)
    prior = Y @ clamped_log(params.priors) + (1 - Y) @ clamped_log(1.0 - params.priors)
    return prior + obs


def score_function_gradient(
    params: ModelParams,
    phi: RecognitionParams,
    x: np.ndarray,
    S: int,
    rng: np.random.Generator | int,
    center: bool = True,
) -> np.ndarray:
    """Likelihood-ratio estimate of the ELBO gradient w.r.t. phi.weights for
    one record, averaged over S posterior samples.

    Centering subtracts the batch-mean learning signal, a constant baseline
    that leaves the expectation unchanged while shrinking the variance; it
    mirrors what the minibatch update does once its running mean has settled.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    x = np.asarray(x)
    xbar = np.concatenate([x.astype(float), [1.0]])
    p = recognition_posterior(phi, xbar)
    y = (rng.random((S, params.m)) < p).astype(np.int8)
    logq = np.sum(y * clamped_log(p) + (1 - y) * clamped_log(1.0 - p), axis=1)
    logp = _complete_loglik_batch(params, x[None, :], y[:, None, :])[:, 0]
    signal = logp - logq
    if center:
        signal = signal - signal.mean()
    w = (y - p) * signal[:, None]
    return np.einsum("sm,k->mk", w, xbar) / S


# ----------------------------------------------------------------------
# baseline network and optimizer state


class BaselineNet:
    """Two tanh layers of configurable width regressing the learning signal."""

    def __init__(self, n_in: int, width: int, rng: np.random.Generator):
        scale = 1.0 / np.sqrt(n_in)
        self.W1 = rng.normal(0, scale, size=(n_in, width))
        self.b1 = np.zeros(width)
        self.W2 = rng.normal(0, 1.0 / np.sqrt(width), size=(width, width))
        self.b2 = np.zeros(width)
        self.W3 = rng.normal(0, 1.0 / np.sqrt(width), size=(width, 1))
        self.b3 = np.zeros(1)

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, tuple]:
        h1 = np.tanh(X @ self.W1 + self.b1)
        h2 = np.tanh(h1 @ self.W2 + self.b2)
        out = (h2 @ self.W3 + self.b3)[:, 0]
        return out, (X, h1, h2)

    def backward(self, cache: tuple, d_out: np.ndarray) -> dict[str, np.ndarray]:
        X, h1, h2 = cache
        d = d_out[:, None]
        g = {"W3": h2.T @ d, "b3": d.sum(axis=0)}
        dh2 = (d @ self.W3.T) * (1 - h2 ** 2)
        g["W2"] = h1.T @ dh2
        g["b2"] = dh2.sum(axis=0)
        dh1 = (dh2 @ self.W2.T) * (1 - h1 ** 2)
        g["W1"] = X.T @ dh1
        g["b1"] = dh1.sum(axis=0)
        return g

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in ("W1", "b1", "W2", "b2", "W3", "b3")}


class RmsProp:
    """Per-parameter adaptive scaling by the root-mean-square of recent grads."""

    def __init__(self, lr: float, decay: float = 0.9, eps: float = 1e-8):
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.cache: dict[str, np.ndarray] = {}

    def step(self, name: str, param: np.ndarray, grad: np.ndarray) -> None:
        c = self.cache.get(name)
        if c is None:
            c = np.zeros_like(param)
        c = self.decay * c + (1 - self.decay) * grad ** 2
        self.cache[name] = c
        param += self.lr * grad / (np.sqrt(c) + self.eps)


@dataclass
class NvilState:
    """Everything nvil_step mutates: reparametrized theta, baseline, running
    signal statistics, optimizer caches."""

    theta_f: np.ndarray          # logits of failures, trainable entries only meaningful
    theta_l: np.ndarray          # logits of leaks
    f_trainable: np.ndarray      # bool (m, n)
    l_trainable: np.ndarray      # bool (n,)
    baseline: BaselineNet
    signal_mean: float = 0.0
    signal_var: float = 0.0
    stats_initialized: bool = False
    opt_phi: RmsProp | None = None
    opt_theta: RmsProp | None = None
    opt_baseline: RmsProp | None = None
    skipped_steps: int = 0
    theta_updated: bool = False  # until the first theta step, expose theta0 bit-exactly


def init_nvil_state(
    params: ModelParams, config: TrainConfig, rng: np.random.Generator
) -> NvilState:
    m, n = params.m, params.n
    f_trainable = np.ones((m, n), dtype=bool)
    l_trainable = np.ones(n, dtype=bool)
    f_trainable[:, params.anchor_index] = False
    l_trainable[params.anchor_index] = False
    theta_f = logit(np.clip(params.failures, LOGIT_EPS, 1 - LOGIT_EPS))
    theta_l = logit(np.clip(params.leaks, LOGIT_EPS, 1 - LOGIT_EPS))
    return NvilState(
        theta_f=theta_f,
        theta_l=theta_l,
        f_trainable=f_trainable,
        l_trainable=l_trainable,
        baseline=BaselineNet(n + 1, config.baseline_width, rng),
        opt_phi=RmsProp(config.lr_phi),
        opt_theta=RmsProp(config.lr_theta),
        opt_baseline=RmsProp(config.lr_phi),
    )


def params_from_state(template: ModelParams, state: NvilState) -> ModelParams:
    if not state.theta_updated:
        return template
    failures = np.where(state.f_trainable, expit(state.theta_f), template.failures)
    leaks = np.where(state.l_trainable, expit(state.theta_l), template.leaks)
    return ModelParams(
        priors=template.priors,
        failures=failures,
        leaks=leaks,
        anchor_index=template.anchor_index,
        noise=template.noise,
        condition_names=template.condition_names,
        feature_names=template.feature_names,
    )


def nvil_step(
    template: ModelParams,
    phi: RecognitionParams,
    state: NvilState,
    xb: np.ndarray,
    xbar: np.ndarray,
    xtil: np.ndarray,
    ab: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
    freeze_theta: bool,
) -> tuple[float, float]:
    """One minibatch update of (phi, theta, baseline).

    Returns (mean ELBO estimate, mean supervised loss) over the batch.
    NaN/Inf gradients skip the whole step.
    """
    S = config.samples_per_gradient
    B = xb.shape[0]
    params = params_from_state(template, state)

    p = recognition_posterior(phi, xbar)                   # (B, m)
    y = (rng.random((S, B, params.m)) < p).astype(np.int8)
    logq = np.sum(y * clamped_log(p) + (1 - y) * clamped_log(1.0 - p), axis=2)
    logp = _complete_loglik_batch(params, xb, y)           # (S, B)
    signal = logp - logq

    b_out, b_cache = state.baseline.forward(xbar)          # (B,)
    centered = signal - b_out[None, :] - state.signal_mean
    norm = max(1.0, np.sqrt(state.signal_var))
    sig = centered / norm

    # Score-function gradient for phi (ascent direction), averaged per record.
    w = (y - p[None, :, :]) * sig[:, :, None]              # (S, B, m)
    grad_phi = np.einsum("sbm,bk->mk", w, xbar) / (S * B)

    # Supervised anchor-prediction term plus weight decay.
    sup_loss = 0.0
    if config.lam > 0:
        z = xtil @ phi.weights.T + phi.aux_bias
        t = expit(z)
        resid = ab - t
        grad_phi += config.lam * (resid.T @ xtil) / B
        grad_aux = config.lam * resid.mean(axis=0)
        sup_loss = float(
            -np.mean(
                np.sum(ab * clamped_log(t) + (1 - ab) * clamped_log(1 - t), axis=1)
            )
        )
    else:
        grad_aux = np.zeros_like(phi.aux_bias)
    grad_phi -= config.weight_decay * phi.weights

    grads_ok = np.all(np.isfinite(grad_phi)) and np.all(np.isfinite(grad_aux))

    if not freeze_theta:
        failures = params.failures
        leaks = params.leaks
        s = y.astype(float) @ np.where(
            failures == 1.0, 0.0, clamped_log(failures)
        )
        q = np.clip((1.0 - leaks) * np.exp(s), 1e-12, 1.0 - 1e-12)
        ratio = q / (1.0 - q)
        G = np.where(xb[None, :, :] == 1, -ratio, 1.0)      # (S, B, n)
        grad_tf = np.einsum("sbm,sbn->mn", y.astype(float), G) / (S * B)
        grad_tf *= 1.0 - failures
        grad_tf[~state.f_trainable] = 0.0
        Gl = np.where(xb[None, :, :] == 1, leaks * ratio, -leaks)
        grad_tl = Gl.mean(axis=(0, 1))
        grad_tl[~state.l_trainable] = 0.0
        grads_ok = grads_ok and np.all(np.isfinite(grad_tf)) and np.all(
            np.isfinite(grad_tl)
        )

    if not grads_ok:
        state.skipped_steps += 1
        return float(np.mean(signal)), sup_loss

    state.opt_phi.step("phi", phi.weights, grad_phi)
    state.opt_phi.step("aux", phi.aux_bias, grad_aux)
    if not freeze_theta:
        state.opt_theta.step("theta_f", state.theta_f, grad_tf)
        state.opt_theta.step("theta_l", state.theta_l, grad_tl)
        state.theta_updated = True

    # Baseline regression to the centered signal (squared error, descent).
    mean_sig = signal.mean(axis=0)                          # (B,)
    target_err = mean_sig - state.signal_mean - b_out
    b_grads = state.baseline.backward(b_cache, target_err / B)
    for name, g in b_grads.items():
        if not np.all(np.isfinite(g)):
            state.skipped_steps += 1
            break
        state.opt_baseline.step(name, getattr(state.baseline, name), g)

    # Running signal statistics (decay 0.9).
    batch_vals = (signal - b_out[None, :]).ravel()
    if not state.stats_initialized:
        state.signal_mean = float(batch_vals.mean())
        state.signal_var = float(batch_vals.var())
        state.stats_initialized = True
    else:
        state.signal_mean = 0.9 * state.signal_mean + 0.1 * float(batch_vals.mean())
        state.signal_var = 0.9 * state.signal_var + 0.1 * float(batch_vals.var())

    return float(np.mean(signal)), sup_loss


# ----------------------------------------------------------------------
# full training loop


@dataclass
class TrainResult:
    best: Checkpoint
    checkpoints: list[Checkpoint]
    history: list[dict]


def center_inputs(X: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Center by the training-split feature means and pad with a trailing 1."""
    out = np.empty((X.shape[0], X.shape[1] + 1))
    out[:, :-1] = X - means
    out[:, -1] = 1.0
    return out


def train(
    dataset: Dataset,
    theta0: ModelParams,
    noise: NoiseModel,
    config: TrainConfig,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Optimize the semi-supervised objective; returns the checkpoint with the
    best held-out anchor score.

    config.val_records records are carved off the front of the dataset as the
    validation split for model selection.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if config.val_records >= len(dataset):
        raise ValueError("validation split larger than dataset")
    rng = np.random.default_rng(config.seed)
    val = dataset.subset(np.arange(config.val_records))
    tr = dataset.subset(np.arange(config.val_records, len(dataset)))

    means = tr.X.mean(axis=0)
    Xbar = center_inputs(tr.X, means)
    Xtil = Xbar.copy()
    Xtil[:, theta0.anchor_index] = 0.0
    A = tr.A.astype(float)

    phi = RecognitionParams.init_random(theta0.m, theta0.n, rng)
    state = init_nvil_state(theta0, config, rng)

    history: list[dict] = []
    checkpoints: list[Checkpoint] = []
    N = len(tr)
    for epoch in range(1, config.epochs + 1):
        freeze = epoch <= config.burn_in_epochs
        order = rng.permutation(N)
        elbo_sum, sup_sum, batches = 0.0, 0.0, 0
        for start in range(0, N, config.minibatch):
            idx = order[start : start + config.minibatch]
            elbo, sup = nvil_step(
                theta0,
                phi,
                state,
                tr.X[idx],
                Xbar[idx],
                Xtil[idx],
                A[idx],
                config,
                rng,
                freeze_theta=freeze,
            )
            elbo_sum += elbo
            sup_sum += sup
            batches += 1
        row = {
            "epoch": epoch,
            "elbo": elbo_sum / batches,
            "supervised_loss": sup_sum / batches,
            "val_anchor_score": "",
        }
        if epoch % config.checkpoint_every == 0 or epoch == config.epochs:
            params = params_from_state(theta0, state)
            score = heldout_anchor_score(
                params,
                val.X,
                val.A,
                noise,
                config.val_gibbs,
                rng=config.seed + epoch,
                max_records=config.val_max_records,
            )
            checkpoints.append(
                Checkpoint(epoch=epoch, params=params, phi=phi.copy(), val_score=score)
            )
            row["val_anchor_score"] = score
        history.append(row)

    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["epoch", "elbo", "supervised_loss", "val_anchor_score"]
            )
            writer.writeheader()
            writer.writerows(history)

    best = max(checkpoints, key=lambda c: (c.val_score, c.epoch))
    return TrainResult(best=best, checkpoints=checkpoints, history=history)
