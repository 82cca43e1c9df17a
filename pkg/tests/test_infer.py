"""Inference: Gibbs marginals vs. enumeration, exact last-tag inference,
held-out anchor scoring.

Oracle: exhaustive enumeration of the latent assignments, with the evidence
likelihood accumulated only over observed columns.
"""

import numpy as np
import pytest

from noisyor.infer import (
    Evidence,
    GibbsConfig,
    ImpossibleEvidenceError,
    anchor_probability_from_marginal,
    exact_last_tag,
    gibbs_posterior,
    gibbs_posterior_batch,
    heldout_anchor_likelihood,
    rank_missing_anchor,
)
from noisyor.model import (
    ModelParams,
    NoiseModel,
    cond_prob_x0,
    enumerate_assignments,
    prior_logprob,
)

from conftest import random_model


def enumeration_posterior(params: ModelParams, evidence: Evidence) -> np.ndarray:
    """P(Y_i = 1 | evidence) by brute force."""
    weights = []
    Ys = enumerate_assignments(params.m)
    for y in Ys:
        if any(y[i] != v for i, v in evidence.clamped.items()):
            weights.append(0.0)
            continue
        w = np.exp(prior_logprob(y, params))
        for j, v in evidence.observed.items():
            q = cond_prob_x0(j, y, params)
            w *= (1.0 - q) if v == 1 else q
        weights.append(w)
    weights = np.asarray(weights)
    total = weights.sum()
    assert total > 0, "evidence impossible in oracle"
    return (weights[:, None] * Ys).sum(axis=0) / total


def random_evidence(params: ModelParams, rng, n_obs=3, clamp=False) -> Evidence:
    obs_idx = rng.choice(params.n, size=min(n_obs, params.n), replace=False)
    observed = {int(j): int(rng.integers(0, 2)) for j in obs_idx}
    clamped = {}
    if clamp:
        i = int(rng.integers(0, params.m))
        clamped[i] = int(rng.integers(0, 2))
    return Evidence(observed=observed, clamped=clamped)


# ----------------------------------------------------------------------
# Gibbs sampling


def test_gibbs_single_condition_hand_bayes():
    # One condition, one noiseless symptom: posterior has a closed form.
    params = ModelParams(
        priors=np.array([0.3]),
        failures=np.array([[0.2, 0.2]]),
        leaks=np.array([0.1, 0.1]),
        anchor_index=np.array([1]),
    )
    p_x1_y1 = 1 - 0.9 * 0.2
    p_x1_y0 = 0.1
    expect = 0.3 * p_x1_y1 / (0.3 * p_x1_y1 + 0.7 * p_x1_y0)
    got = gibbs_posterior(
        params,
        Evidence(observed={0: 1}),
        GibbsConfig(chains=4, burn_in=200, kept=5000, seed=0),
    )
    assert got[0] == pytest.approx(expect, abs=0.01)


@pytest.mark.parametrize("seed", range(4))
def test_gibbs_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    params = random_model(4, 7, rng)
    evidence = random_evidence(params, rng, n_obs=4, clamp=(seed % 2 == 0))
    oracle = enumeration_posterior(params, evidence)
    got = gibbs_posterior(
        params, evidence, GibbsConfig(chains=4, burn_in=300, kept=6000, seed=seed)
    )
    np.testing.assert_allclose(got, oracle, atol=0.02)


def test_gibbs_clamped_conditions_exact(small_model):
    evidence = Evidence(observed={0: 1}, clamped={0: 1, 2: 0})
    got = gibbs_posterior(
        small_model, evidence, GibbsConfig(chains=2, burn_in=50, kept=100, seed=0)
    )
    assert got[0] == 1.0 and got[2] == 0.0


def test_gibbs_deterministic_for_fixed_seed(small_model):
    evidence = Evidence(observed={0: 1, 1: 0})
    config = GibbsConfig(chains=2, burn_in=100, kept=500, seed=9)
    a = gibbs_posterior(small_model, evidence, config)
    b = gibbs_posterior(small_model, evidence, config)
    np.testing.assert_array_equal(a, b)


def test_gibbs_impossible_evidence_raises():
    params = ModelParams(
        priors=np.array([0.5]),
        failures=np.ones((1, 2)),
        leaks=np.array([0.0, 0.0]),
        anchor_index=np.array([1]),
    )
    # Column 0 has no parents and zero leak: it can never be on.
    with pytest.raises(ImpossibleEvidenceError):
        gibbs_posterior(
            params, Evidence(observed={0: 1}), GibbsConfig(chains=1, burn_in=10, kept=10)
        )


def test_gibbs_batch_matches_single(small_model):
    rng = np.random.default_rng(2)
    X = (rng.random((3, small_model.n)) < 0.5).astype(np.int8)
    mask = np.ones_like(X, dtype=bool)
    config = GibbsConfig(chains=4, burn_in=300, kept=4000, seed=1)
    batch = gibbs_posterior_batch(small_model, X, mask, None, config)
    for k in range(3):
        evidence = Evidence(observed={j: int(X[k, j]) for j in range(small_model.n)})
        single = enumeration_posterior(small_model, evidence)
        np.testing.assert_allclose(batch[k], single, atol=0.025)


def test_gibbs_more_evidence_moves_posterior(small_model):
    # Observing a condition's anchor on should raise its marginal.
    config = GibbsConfig(chains=4, burn_in=200, kept=2000, seed=3)
    base = gibbs_posterior(small_model, Evidence(), config)
    j = int(small_model.anchor_index[0])
    with_anchor = gibbs_posterior(small_model, Evidence(observed={j: 1}), config)
    assert with_anchor[0] > base[0]


# ----------------------------------------------------------------------
# exact last-tag inference


def enumeration_last_tag(params, x, known):
    """Conditioned on the known positives plus exactly one more condition on."""
    cands = [i for i in range(params.m) if i not in set(known)]
    weights = []
    for i in cands:
        y = np.zeros(params.m, dtype=np.int8)
        y[list(known)] = 1
        y[i] = 1
        w = np.exp(prior_logprob(y, params))
        for j in range(params.n):
            q = cond_prob_x0(j, y, params)
            w *= (1.0 - q) if x[j] == 1 else q
        weights.append(w)
    weights = np.asarray(weights)
    return np.asarray(cands), weights / weights.sum()


@pytest.mark.parametrize("seed", range(5))
def test_exact_last_tag_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    params = random_model(4, 7, rng)
    x = (rng.random(params.n) < 0.5).astype(np.int8)
    known = [int(rng.integers(0, params.m))]
    cands, probs, degenerate = exact_last_tag(params, x, known)
    assert not degenerate
    oracle_cands, oracle_probs = enumeration_last_tag(params, x, known)
    np.testing.assert_array_equal(cands, oracle_cands)
    np.testing.assert_allclose(probs, oracle_probs, atol=1e-10)
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_exact_last_tag_symmetric_conditions():
    # Two interchangeable conditions must tie exactly.
    failures = np.array([[0.3, 1.0, 0.2, 1.0, 1.0],
                         [0.3, 1.0, 1.0, 0.2, 1.0],
                         [1.0, 0.5, 1.0, 1.0, 0.2]])
    params = ModelParams(
        priors=np.array([0.25, 0.25, 0.4]),
        failures=failures,
        leaks=np.array([0.05, 0.05, 0.1, 0.1, 0.1]),
        anchor_index=np.array([2, 3, 4]),
    )
    x = np.array([1, 0, 0, 0, 0], dtype=np.int8)
    cands, probs, _ = exact_last_tag(params, x, known=[2])
    assert set(cands.tolist()) == {0, 1}
    assert probs[0] == pytest.approx(probs[1], abs=1e-12)


def test_exact_last_tag_rejects_full_known(small_model):
    with pytest.raises(ValueError):
        exact_last_tag(small_model, np.zeros(small_model.n, dtype=np.int8),
                       list(range(small_model.m)))


def test_exact_last_tag_degenerate_falls_back_to_uniform():
    # x contradicts every candidate: a zero-leak column is on although no
    # candidate (nor the known set) points at it.
    params = ModelParams(
        priors=np.array([0.3, 0.3]),
        failures=np.array([[1.0, 0.2, 1.0], [1.0, 1.0, 0.2]]),
        leaks=np.array([0.0, 0.1, 0.1]),
        anchor_index=np.array([1, 2]),
    )
    x = np.array([1, 0, 0], dtype=np.int8)
    cands, probs, degenerate = exact_last_tag(params, x, known=[0])
    assert degenerate
    np.testing.assert_allclose(probs, 1.0 / probs.size)


# ----------------------------------------------------------------------
# held-out anchors


def test_anchor_probability_identity():
    noise = NoiseModel(np.array([0.8]), np.array([0.1]))
    got = anchor_probability_from_marginal(np.array([0.4]), noise)
    assert got[0] == pytest.approx(0.4 * 0.8 + 0.6 * 0.1)


def test_heldout_anchor_likelihood_matches_marginal(small_model):
    evidence = Evidence(observed={0: 1})
    config = GibbsConfig(chains=2, burn_in=100, kept=1000, seed=0)
    p_y1 = gibbs_posterior(small_model, evidence, config)[1]
    expect = p_y1 * small_model.noise.p_a1_y1[1] + (1 - p_y1) * small_model.noise.p_a1_y0[1]
    got = heldout_anchor_likelihood(small_model, evidence, 1, small_model.noise, config)
    assert got == pytest.approx(expect, abs=1e-12)


def test_heldout_anchor_likelihood_rejects_observed_anchor(small_model):
    j = int(small_model.anchor_index[0])
    with pytest.raises(ValueError):
        heldout_anchor_likelihood(
            small_model, Evidence(observed={j: 1}), 0, small_model.noise,
            GibbsConfig(chains=1, burn_in=10, kept=10),
        )


def test_rank_missing_anchor_recovers_strong_signal():
    # Each condition has one nearly deterministic private symptom; a record
    # showing only condition 0's symptom should rank its censored anchor first.
    failures = np.array([[0.02, 1.0, 1.0, 0.2, 1.0, 1.0],
                         [1.0, 0.02, 1.0, 1.0, 0.2, 1.0],
                         [1.0, 1.0, 0.02, 1.0, 1.0, 0.2]])
    noise = NoiseModel(np.full(3, 0.8), np.full(3, 0.1))
    params = ModelParams(
        priors=np.array([0.3, 0.3, 0.3]),
        failures=failures,
        leaks=np.array([0.05, 0.05, 0.05, 0.1, 0.1, 0.1]),
        anchor_index=np.array([3, 4, 5]),
        noise=noise,
    )
    x = np.array([1, 0, 0, 1, 0, 0], dtype=np.int8)
    a = np.array([1, 0, 0], dtype=np.int8)
    ranking, scores, rank, score = rank_missing_anchor(
        params, x, a, 0, noise,
        GibbsConfig(chains=4, burn_in=200, kept=2000, seed=0),
    )
    assert rank == 1
    assert ranking[0] == 0
    assert scores[0] == pytest.approx(score)


def test_rank_missing_anchor_validates_inputs(small_model):
    a = np.zeros(small_model.m, dtype=np.int8)
    x = np.zeros(small_model.n, dtype=np.int8)
    config = GibbsConfig(chains=1, burn_in=10, kept=10)
    with pytest.raises(ValueError):
        rank_missing_anchor(small_model, x, a, 0, small_model.noise, config)
