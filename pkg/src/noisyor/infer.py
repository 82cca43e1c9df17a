"""Test-time inference: Gibbs sampling for arbitrary conditioning, exact
last-tag inference, and held-out anchor likelihood.

The Gibbs engine runs many rows (chains, or independent records) in lock-step
with numpy; each row has its own evidence mask and clamped conditions.  Full
conditionals touch only the observation columns a condition actually points
at, and per-column product terms are updated incrementally per flip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .model import ModelParams, NoiseModel, PROB_FLOOR, clamped_log

_LOG_FLOOR = np.log(PROB_FLOOR)
_LOG_CEIL = np.log1p(-PROB_FLOOR)


class ImpossibleEvidenceError(ValueError):
    """Observed evidence has probability zero under the model."""


@dataclass
class Evidence:
    """observed: observation index -> 0/1; clamped: condition index -> 0/1."""

    observed: dict[int, int] = field(default_factory=dict)
    clamped: dict[int, int] = field(default_factory=dict)

    def validate(self, params: ModelParams) -> None:
        for j in self.observed:
            if not 0 <= j < params.n:
                raise IndexError(f"observed index {j} out of range")
        for i in self.clamped:
            if not 0 <= i < params.m:
                raise IndexError(f"clamped condition {i} out of range")


@dataclass
class GibbsConfig:
    chains: int = 4
    burn_in: int = 500
    kept: int = 2000
    thinning: int = 1
    seed: int = 0

    def __post_init__(self):
        if min(self.chains, self.burn_in + 1, self.kept, self.thinning) <= 0:
            raise ValueError("Gibbs schedule counts must be positive")


def _log1mexp(t: np.ndarray) -> np.ndarray:
    """log(1 - e^t) for t <= log(1 - eps), numerically stable."""
    return np.log1p(-np.exp(t))


def _check_feasible(params: ModelParams, X: np.ndarray, mask: np.ndarray) -> None:
    # x_j = 1 is impossible when the column can never fire; x_j = 0 when the
    # leak is deterministic.
    never_fires = (params.leaks == 0.0) & np.all(params.failures == 1.0, axis=0)
    always_fires = params.leaks == 1.0
    bad_on = mask & (X == 1) & never_fires
    bad_off = mask & (X == 0) & always_fires
    if bad_on.any() or bad_off.any():
        j = int(np.argwhere(bad_on | bad_off)[0][1])
        raise ImpossibleEvidenceError(
            f"evidence on observation {j} has probability zero under the model"
        )


def _gibbs_marginals(
    params: ModelParams,
    X: np.ndarray,
    mask: np.ndarray,
    clamp: np.ndarray,
    config: GibbsConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Systematic-scan Gibbs over rows; returns mean Y per row over kept sweeps.

    X, mask: (R, n); clamp: (R, m) with -1 for free conditions.
    """
    R, n = X.shape
    m = params.m
    _check_feasible(params, X, mask)

    logf = clamped_log(params.failures)
    logf[params.failures == 1.0] = 0.0
    log1ml = clamped_log(1.0 - params.leaks)
    logit_pi = clamped_log(params.priors) - clamped_log(1.0 - params.priors)
    children = [np.flatnonzero(logf[i] != 0.0) for i in range(m)]

    Y = (rng.random((R, m)) < params.priors).astype(np.int8)
    clamped = clamp >= 0
    Y[clamped] = clamp[clamped]
    free = [np.flatnonzero(~clamped[:, i]) for i in range(m)]

    S = Y.astype(float) @ logf  # (R, n) log of the failure product
    totals = np.zeros((R, m))
    kept = 0
    total_sweeps = config.burn_in + config.kept * config.thinning
    Xf = X.astype(float)
    for sweep in range(total_sweeps):
        for i in range(m):
            rows = free[i]
            if rows.size == 0:
                continue
            Ji = children[i]
            lf = logf[i, Ji]
            s_wo = S[np.ix_(rows, Ji)] - Y[rows, i, None] * lf
            t0 = np.clip(log1ml[Ji] + s_wo, _LOG_FLOOR, _LOG_CEIL)
            t1 = np.clip(t0 + lf, _LOG_FLOOR, _LOG_CEIL)
            mk = mask[np.ix_(rows, Ji)]
            xk = Xf[np.ix_(rows, Ji)]
            diff = np.where(
                xk == 1.0, _log1mexp(t1) - _log1mexp(t0), t1 - t0
            )
            delta = logit_pi[i] + np.sum(diff * mk, axis=1)
            new = (rng.random(rows.size) < expit(delta)).astype(np.int8)
            changed = new != Y[rows, i]
            if changed.any():
                ch_rows = rows[changed]
                sign = (new[changed] * 2 - 1).astype(float)
                S[np.ix_(ch_rows, Ji)] += sign[:, None] * lf
                Y[ch_rows, i] = new[changed]
        if sweep >= config.burn_in and (sweep - config.burn_in) % config.thinning == 0:
            totals += Y
            kept += 1
    return totals / kept


def gibbs_posterior(
    params: ModelParams, evidence: Evidence, config: GibbsConfig
) -> np.ndarray:
    """Posterior marginals P(Y_i = 1 | evidence), averaged over chains."""
    evidence.validate(params)
    rng = np.random.default_rng(config.seed)
    R = config.chains
    X = np.zeros((R, params.n), dtype=np.int8)
    mask = np.zeros((R, params.n), dtype=bool)
    for j, v in evidence.observed.items():
        X[:, j] = v
        mask[:, j] = True
    clamp = np.full((R, params.m), -1, dtype=np.int8)
    for i, v in evidence.clamped.items():
        clamp[:, i] = v
    marg = _gibbs_marginals(params, X, mask, clamp, config, rng).mean(axis=0)
    for i, v in evidence.clamped.items():
        marg[i] = float(v)
    return marg


def gibbs_posterior_batch(
    params: ModelParams,
    X: np.ndarray,
    mask: np.ndarray,
    clamp: np.ndarray | None,
    config: GibbsConfig,
) -> np.ndarray:
    """Marginals for a batch of records, each replicated over config.chains."""
    R = X.shape[0]
    C = config.chains
    rng = np.random.default_rng(config.seed)
    if clamp is None:
        clamp = np.full((R, params.m), -1, dtype=np.int8)
    Xr = np.repeat(X, C, axis=0)
    maskr = np.repeat(mask, C, axis=0)
    clampr = np.repeat(clamp, C, axis=0)
    marg = _gibbs_marginals(params, Xr, maskr, clampr, config, rng)
    marg = marg.reshape(R, C, params.m).mean(axis=1)
    clamped = clamp >= 0
    marg[clamped] = clamp[clamped]
    return marg


# ----------------------------------------------------------------------
# exact last-tag inference


def exact_last_tag(
    params: ModelParams, x: np.ndarray, known: set[int] | list[int]
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Distribution over which single unknown condition is on, given x and the
    known-positive set.

    Exactly one unknown is on by task design, so each candidate's complete
    likelihood is computed and normalized over candidates.  Returns
    (candidate indices ascending, probabilities, degenerate_mass_flag).
    """
    known = sorted(set(int(i) for i in known))
    if len(known) >= params.m:
        raise ValueError("no unknown conditions left to infer")
    x = np.asarray(x)
    cands = np.array([i for i in range(params.m) if i not in known])
    known_arr = np.array(known, dtype=int)

    pi = params.priors
    log_pi = clamped_log(pi)
    log_1mpi = clamped_log(1.0 - pi)
    base_prior = log_1mpi.sum() + np.sum(log_pi[known_arr] - log_1mpi[known_arr])
    prior_terms = base_prior + log_pi[cands] - log_1mpi[cands]

    q_base = (1.0 - params.leaks) * np.prod(params.failures[known_arr, :], axis=0)
    Q = q_base[None, :] * params.failures[cands, :]  # (|U|, n)
    obs_terms = clamped_log(np.where(x[None, :] == 1, 1.0 - Q, Q)).sum(axis=1)

    logp = prior_terms + obs_terms
    total = logsumexp(logp)
    if not np.isfinite(total) or total < len(cands) * _LOG_FLOOR / 2:
        # All candidates at the clamp floor: fall back to uniform.
        return cands, np.full(cands.size, 1.0 / cands.size), True
    probs = np.exp(logp - total)
    return cands, probs, False


# ----------------------------------------------------------------------
# held-out anchor inference


def heldout_anchor_likelihood(
    params: ModelParams,
    evidence: Evidence,
    i: int,
    noise: NoiseModel,
    config: GibbsConfig,
) -> float:
    """P(A_i = 1 | X') = sum_y P(Y_i = y | X') P(A_i = 1 | Y_i = y)."""
    j = int(params.anchor_index[i])
    if j in evidence.observed:
        raise ValueError(f"anchor column {j} of condition {i} is in the evidence")
    p_y1 = float(gibbs_posterior(params, evidence, config)[i])
    return p_y1 * float(noise.p_a1_y1[i]) + (1.0 - p_y1) * float(noise.p_a1_y0[i])


def anchor_probability_from_marginal(
    p_y1: np.ndarray, noise: NoiseModel
) -> np.ndarray:
    return p_y1 * noise.p_a1_y1 + (1.0 - p_y1) * noise.p_a1_y0


def rank_missing_anchor(
    params: ModelParams,
    x: np.ndarray,
    a: np.ndarray,
    censored_positive: int,
    noise: NoiseModel,
    config: GibbsConfig,
) -> tuple[np.ndarray, np.ndarray, int, float]:
    """Rank the censored anchors of one record by P(A_i = 1 | X').

    X' keeps every non-anchor feature plus the anchors of retained positives;
    the candidate set is the censored positive plus all negative anchors.
    Returns (ranking of condition indices descending by score, scores aligned
    with the ranking, rank of the true censored anchor starting at 1, its
    score).  Ties break by condition index.
    """
    a = np.asarray(a)
    if a.sum() < 1:
        raise ValueError("record has no positive anchors")
    if a[censored_positive] != 1:
        raise ValueError("censored condition's anchor is not positive")
    censored = np.flatnonzero((a == 0) | (np.arange(params.m) == censored_positive))
    mask = np.ones(params.n, dtype=bool)
    mask[params.anchor_index[censored]] = False
    marg = gibbs_posterior_batch(
        params, np.asarray(x)[None, :], mask[None, :], None, config
    )[0]
    scores = anchor_probability_from_marginal(marg, noise)[censored]
    order = np.lexsort((censored, -scores))
    ranking = censored[order]
    true_pos = int(np.flatnonzero(ranking == censored_positive)[0]) + 1
    return ranking, scores[order], true_pos, float(
        scores[np.flatnonzero(censored == censored_positive)[0]]
    )


def heldout_anchor_score(
    params: ModelParams,
    X: np.ndarray,
    A: np.ndarray,
    noise: NoiseModel,
    config: GibbsConfig,
    rng: np.random.Generator | int = 0,
    max_records: int | None = None,
) -> float:
    """Mean reciprocal rank of the censored positive anchor over a validation
    split; the label-free model-selection criterion.

    One positive anchor per record is censored at random (seeded) together
    with all negative anchors.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    has_pos = np.flatnonzero(A.sum(axis=1) >= 1)
    if max_records is not None and has_pos.size > max_records:
        has_pos = has_pos[:max_records]
    if has_pos.size == 0:
        raise ValueError("no records with positive anchors")
    R = has_pos.size
    m, n = params.m, params.n
    censored_pos = np.empty(R, dtype=int)
    mask = np.ones((R, n), dtype=bool)
    for r, k in enumerate(has_pos):
        pos = np.flatnonzero(A[k] == 1)
        censored_pos[r] = rng.choice(pos)
        cens = (A[k] == 0) | (np.arange(m) == censored_pos[r])
        mask[r, params.anchor_index[cens]] = False
    marg = gibbs_posterior_batch(params, X[has_pos], mask, None, config)
    scores = marg * noise.p_a1_y1 + (1.0 - marg) * noise.p_a1_y0
    rr = np.empty(R)
    for r, k in enumerate(has_pos):
        cens = np.flatnonzero((A[k] == 0) | (np.arange(m) == censored_pos[r]))
        sc = scores[r, cens]
        order = np.lexsort((cens, -sc))
        rank = int(np.flatnonzero(cens[order] == censored_pos[r])[0]) + 1
        rr[r] = 1.0 / rank
    return float(rr.mean())
