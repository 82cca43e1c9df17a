"""Method-of-moments initialization from anchors with known noise rates.

Pipeline per (condition i, observation j): estimate P(X_j | A_i) from counts,
denoise it into P(X_j | Y_i) by KL projection through the corruption mixture,
then read off failure probabilities as a conditional ratio.  Priors come from
inverting the anchor marginal; leaks from inverting the Quickscore marginal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .model import ModelParams, NoiseModel

KL_FLOOR = 1e-300


class UnidentifiableNoiseError(ValueError):
    """Anchor noise rates leave the condition prior unidentifiable."""


@dataclass
class ConditionalMoments:
    """Conditional distributions in the fixed 4-vector layout
    [P(X=0|A=0), P(X=0|A=1), P(X=1|A=0), P(X=1|A=1)] and the denoised
    counterpart conditioned on Y."""

    p_x_given_a: np.ndarray
    p_x_given_y: np.ndarray | None = None
    counts: np.ndarray | None = None


def _vec4_to_ax(v: np.ndarray) -> np.ndarray:
    """4-vector layout -> array[..., a, x]."""
    v = np.asarray(v, dtype=float)
    out = np.empty(v.shape[:-1] + (2, 2))
    out[..., 0, 0] = v[..., 0]
    out[..., 1, 0] = v[..., 1]
    out[..., 0, 1] = v[..., 2]
    out[..., 1, 1] = v[..., 3]
    return out


def _ax_to_vec4(c: np.ndarray) -> np.ndarray:
    out = np.empty(c.shape[:-2] + (4,))
    out[..., 0] = c[..., 0, 0]
    out[..., 1] = c[..., 1, 0]
    out[..., 2] = c[..., 0, 1]
    out[..., 3] = c[..., 1, 1]
    return out


def empirical_conditionals(
    dataset: Dataset, i: int, j: int, smoothing: float = 1.0
) -> np.ndarray:
    """P(X_j | A_i) as a 4-vector from empirical counts with additive smoothing."""
    a = dataset.A[:, i]
    x = dataset.X[:, j]
    if not (np.any(a == 0) and np.any(a == 1)):
        raise ValueError(f"condition {i}: anchor never takes both states in the data")
    v = np.empty(4)
    for aa in (0, 1):
        mask = a == aa
        n_a = mask.sum()
        n_x1 = int(x[mask].sum())
        v[aa] = (n_a - n_x1 + smoothing) / (n_a + 2 * smoothing)
        v[2 + aa] = (n_x1 + smoothing) / (n_a + 2 * smoothing)
    return v


def _conditionals_all_columns(
    X: np.ndarray, a: np.ndarray, smoothing: float = 1.0
) -> np.ndarray:
    """Vectorized empirical_conditionals over every observation column.

    Returns (n, 4) in the standard layout.
    """
    n_a1 = int(a.sum())
    n_a0 = a.shape[0] - n_a1
    x1_a1 = a.astype(float) @ X
    x1_a0 = X.sum(axis=0) - x1_a1
    v = np.empty((X.shape[1], 4))
    v[:, 0] = (n_a0 - x1_a0 + smoothing) / (n_a0 + 2 * smoothing)
    v[:, 1] = (n_a1 - x1_a1 + smoothing) / (n_a1 + 2 * smoothing)
    v[:, 2] = (x1_a0 + smoothing) / (n_a0 + 2 * smoothing)
    v[:, 3] = (x1_a1 + smoothing) / (n_a1 + 2 * smoothing)
    return v


def build_noise_matrix(p_a1_y1: float, p_a1_y0: float) -> np.ndarray:
    """4x4 block-diagonal corruption matrix, one 2x2 block per value of X.

    Each block is [[P(A=0|Y=0), P(A=0|Y=1)], [P(A=1|Y=0), P(A=1|Y=1)]];
    columns sum to one.
    """
    if p_a1_y1 == p_a1_y0:
        warnings.warn("anchor noise block is singular; denoising will still run")
    block = np.array(
        [[1.0 - p_a1_y0, 1.0 - p_a1_y1], [p_a1_y0, p_a1_y1]]
    )
    R = np.zeros((4, 4))
    R[:2, :2] = block
    R[2:, 2:] = block
    return R


def estimate_prior(p_a1_y1: float, p_a1_y0: float, p_a1: float) -> float:
    """Solve P(A=1) = pi * P(A=1|Y=1) + (1-pi) * P(A=1|Y=0) for pi, clipped."""
    if not 0 <= p_a1 <= 1:
        raise ValueError("anchor marginal must be a probability")
    denom = p_a1_y1 - p_a1_y0
    if denom == 0:
        raise UnidentifiableNoiseError(
            "P(A=1|Y=1) == P(A=1|Y=0): prior is unidentifiable"
        )
    return float(np.clip((p_a1 - p_a1_y0) / denom, 0.0, 1.0))


def mixture_weights(
    p_a1_y1: float, p_a1_y0: float, p_a1: float
) -> np.ndarray:
    """W[a, y] = P(Y=y | A=a), from noise rates and the anchor marginal.

    The prior needed by Bayes rule is recovered from the same anchor marginal,
    so the weights are self-consistent with the observed P(A).
    """
    pi = estimate_prior(p_a1_y1, p_a1_y0, p_a1)
    joint = np.array(
        [
            [(1.0 - pi) * (1.0 - p_a1_y0), pi * (1.0 - p_a1_y1)],
            [(1.0 - pi) * p_a1_y0, pi * p_a1_y1],
        ]
    )
    totals = joint.sum(axis=1, keepdims=True)
    totals[totals == 0] = 1.0
    return joint / totals


def mixture_kl(c_ax: np.ndarray, w: np.ndarray, q_yx: np.ndarray) -> np.ndarray:
    """KL of the empirical conditionals against the mixture W q, summed over
    both anchor states.  Batched over leading axes."""
    mix = np.einsum("ay,...yx->...ax", w, q_yx)
    safe = np.clip(mix, KL_FLOOR, None)
    terms = np.where(c_ax > 0, c_ax * (np.log(np.clip(c_ax, KL_FLOOR, None)) - np.log(safe)), 0.0)
    return terms.sum(axis=(-2, -1))


def inversion_solution(p_x_given_a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Solve the linear system c = W q exactly (per value of X); may leave
    the simplex.  Returned in the 4-vector layout."""
    c_ax = _vec4_to_ax(p_x_given_a)
    w_inv = np.linalg.inv(w)
    q_yx = np.einsum("ya,...ax->...yx", w_inv, c_ax)
    return _ax_to_vec4(q_yx)


def denoise_batch(
    c4: np.ndarray,
    w: np.ndarray,
    step: float = 0.1,
    max_iter: int = 20000,
    tol: float = 1e-16,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exponentiated gradient descent on the simplex-constrained KL projection,
    vectorized over a batch of (i, j) pairs sharing one weight matrix.

    Returns (denoised 4-vectors, converged flags, final KL values).
    """
    c_ax = _vec4_to_ax(np.atleast_2d(c4))
    K = c_ax.shape[0]
    # Init at the input conditionals: [k, a, x] reread as [k, y, x], which is
    # already the exact optimum in the noiseless case.
    q = c_ax.copy()
    kl = mixture_kl(c_ax, w, q)
    converged = np.zeros(K, dtype=bool)
    active = ~converged
    for _ in range(max_iter):
        if not active.any():
            break
        mix = np.einsum("ay,kyx->kax", w, q[active])
        ratio = c_ax[active] / np.clip(mix, KL_FLOOR, None)
        grad = -np.einsum("ay,kax->kyx", w, ratio)
        q_new = q[active] * np.exp(-step * grad)
        q_new /= q_new.sum(axis=-1, keepdims=True)
        kl_new = mixture_kl(c_ax[active], w, q_new)
        improved = kl[active] - kl_new
        q[active] = q_new
        kl[active] = kl_new
        done = improved < tol
        idx = np.flatnonzero(active)
        converged[idx[done]] = True
        active = ~converged
    return _ax_to_vec4(q), converged, kl


def denoise_conditionals(
    p_x_given_a: np.ndarray,
    noise_i: tuple[float, float],
    p_a_marginal: float,
    step: float = 0.1,
    max_iter: int = 20000,
    tol: float = 1e-16,
) -> tuple[np.ndarray, bool]:
    """KL-project one empirical conditional through the corruption mixture.

    noise_i is (P(A=1|Y=1), P(A=1|Y=0)).  Returns the denoised 4-vector and a
    convergence flag.
    """
    w = mixture_weights(noise_i[0], noise_i[1], p_a_marginal)
    out, converged, _ = denoise_batch(
        np.atleast_2d(p_x_given_a), w, step=step, max_iter=max_iter, tol=tol
    )
    return out[0], bool(converged[0])


def estimate_failure(p_x_given_y: np.ndarray) -> tuple[float, bool]:
    """f-hat = clip(P(X=0|Y=1) / P(X=0|Y=0), 0, 1); flags degenerate denominators."""
    num, den = float(p_x_given_y[1]), float(p_x_given_y[0])
    if den == 0.0:
        return 1.0, True
    return float(np.clip(num / den, 0.0, 1.0)), False


def estimate_leak(
    failures_col: np.ndarray, priors: np.ndarray, p_x0: float
) -> tuple[float, bool]:
    """Quickscore inversion: l-hat = clip(1 - P(X=0) / prod(1 - pi + pi f), 0, 1)."""
    denom = float(np.prod(1.0 - priors + priors * failures_col))
    if denom == 0.0:
        return 0.0, True
    return float(np.clip(1.0 - p_x0 / denom, 0.0, 1.0)), False


@dataclass
class MomentsDiagnostics:
    """Per-run report: convergence flags and clipping counts, keyed by condition."""

    nonconverged_pairs: list[tuple[int, int]] = field(default_factory=list)
    clipped_failures: int = 0
    clipped_leaks: int = 0
    degenerate_denominators: int = 0
    priors: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "nonconverged_pairs": [list(p) for p in self.nonconverged_pairs],
            "clipped_failures": self.clipped_failures,
            "clipped_leaks": self.clipped_leaks,
            "degenerate_denominators": self.degenerate_denominators,
            "priors": self.priors,
        }


def moments_init(
    dataset: Dataset,
    noise: NoiseModel,
    smoothing: float = 1.0,
    egd_step: float = 0.1,
    egd_max_iter: int = 20000,
    egd_tol: float = 1e-16,
    anchor_index: np.ndarray | None = None,
    condition_names: tuple[str, ...] = (),
    feature_names: tuple[str, ...] = (),
) -> tuple[ModelParams, MomentsDiagnostics]:
    """Full moments-based initialization of a model from anchored data.

    Anchor columns are assumed to be the last m observation columns unless an
    explicit anchor_index is given; their failure and leak entries are copied
    from the noise model directly, never estimated.
    """
    m, n = dataset.m, dataset.n
    if anchor_index is None:
        anchor_index = np.arange(n - m, n)
    anchor_index = np.asarray(anchor_index)
    diag = MomentsDiagnostics()
    is_anchor = np.zeros(n, dtype=bool)
    is_anchor[anchor_index] = True

    priors = np.empty(m)
    failures = np.ones((m, n))
    noiseless = np.all(noise.p_a1_y1 == 1.0) & np.all(noise.p_a1_y0 == 0.0)
    for i in range(m):
        a = dataset.A[:, i]
        p_a1 = float(a.mean())
        try:
            priors[i] = estimate_prior(noise.p_a1_y1[i], noise.p_a1_y0[i], p_a1)
        except UnidentifiableNoiseError:
            priors[i] = p_a1  # flagged default: trust the raw anchor rate
            diag.degenerate_denominators += 1
        cols = np.flatnonzero(~is_anchor)
        c4 = _conditionals_all_columns(dataset.X[:, cols], a, smoothing)
        if noiseless:
            denoised = c4
        else:
            w = mixture_weights(noise.p_a1_y1[i], noise.p_a1_y0[i], p_a1)
            denoised, converged, _ = denoise_batch(
                c4, w, step=egd_step, max_iter=egd_max_iter, tol=egd_tol
            )
            for k in np.flatnonzero(~converged):
                diag.nonconverged_pairs.append((i, int(cols[k])))
        ratio = np.where(denoised[:, 0] > 0, denoised[:, 1] / np.where(denoised[:, 0] > 0, denoised[:, 0], 1.0), 1.0)
        diag.degenerate_denominators += int((denoised[:, 0] == 0).sum())
        diag.clipped_failures += int(((ratio < 0) | (ratio > 1)).sum())
        failures[i, cols] = np.clip(ratio, 0.0, 1.0)

    # Anchor columns come straight from the corruption process.
    failures[np.arange(m), anchor_index] = 1.0 - noise.p_a1_y1
    leaks = np.zeros(n)
    leaks[anchor_index] = noise.p_a1_y0
    p_x0 = 1.0 - dataset.X.mean(axis=0)
    for j in np.flatnonzero(~is_anchor):
        leaks[j], degenerate = estimate_leak(failures[:, j], priors, float(p_x0[j]))
        if degenerate:
            diag.degenerate_denominators += 1
        if leaks[j] in (0.0, 1.0):
            diag.clipped_leaks += 1
    diag.priors = priors.tolist()

    params = ModelParams(
        priors=priors,
        failures=failures,
        leaks=leaks,
        anchor_index=anchor_index,
        noise=noise,
        condition_names=condition_names,
        feature_names=feature_names,
    )
    return params, diag
