"""HTTP service: request parsing, determinism, clamping, error envelopes."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient

from noisyor.model import ModelParams
from noisyor.service import ServiceState, create_app

from conftest import random_model


@pytest.fixture(scope="module")
def app_state():
    params = random_model(3, 6, np.random.default_rng(0))
    named = ModelParams(
        priors=params.priors,
        failures=params.failures,
        leaks=params.leaks,
        anchor_index=params.anchor_index,
        noise=params.noise,
        condition_names=("flu", "uti", "gerd"),
        feature_names=tuple(f"tok{j}" for j in range(6)),
    )
    return ServiceState(params=named)


@pytest.fixture(scope="module")
def client(app_state):
    return TestClient(create_app(app_state))


def test_healthz(client):
    body = client.get("/healthz").json()
    assert body == {"status": "ok", "model_loaded": True}


def test_meta_lists_model_surface(client, app_state):
    body = client.get("/api/meta").json()
    assert body["conditions"] == ["flu", "uti", "gerd"]
    assert body["n_features"] == 6
    assert body["model_version"] == app_state.version
    assert "tok0" in body["tokens"]
    assert set(body["sampler_defaults"]) == {"chains", "burn_in", "kept"}


def test_posterior_deterministic_for_seed(client):
    req = {"tokens": ["tok0"], "seed": 11}
    a = client.post("/api/posterior", json=req)
    b = client.post("/api/posterior", json=req)
    assert a.status_code == 200
    assert a.content == b.content


def test_posterior_seed_changes_samples(client):
    a = client.post("/api/posterior", json={"tokens": ["tok0"], "seed": 1}).json()
    b = client.post("/api/posterior", json={"tokens": ["tok0"], "seed": 2}).json()
    assert a["marginals"] != b["marginals"]


def test_posterior_concurrent_replays_identical(client):
    req = {"tokens": ["tok0", "tok1"], "seed": 5}
    with ThreadPoolExecutor(max_workers=8) as pool:
        bodies = list(pool.map(
            lambda _: client.post("/api/posterior", json=req).content, range(20)
        ))
    assert len(set(bodies)) == 1


def test_posterior_clamps_report_exact_probabilities(client):
    body = client.post(
        "/api/posterior",
        json={"tokens": ["tok0"], "confirmed": ["flu"], "rejected": [2], "seed": 0},
    ).json()
    assert body["marginals"][0] == 1.0
    assert body["marginals"][2] == 0.0
    suggested = {s["index"] for s in body["suggestions"]}
    assert suggested == {1}  # confirmed/rejected tags are excluded


def test_posterior_accepts_named_and_indexed_features(client):
    by_name = client.post(
        "/api/posterior", json={"observed": {"tok1": 1}, "seed": 3}
    ).json()
    by_index = client.post(
        "/api/posterior", json={"observed": {"1": 1}, "seed": 3}
    ).json()
    assert by_name["marginals"] == by_index["marginals"]


def test_unknown_token_is_400_with_envelope(client):
    resp = client.post("/api/posterior", json={"tokens": ["nope"]})
    assert resp.status_code == 400
    body = resp.json()
    assert set(body) == {"code", "message"}
    assert body["code"] == "unknown_token"


def test_unknown_condition_is_400(client):
    resp = client.post("/api/posterior", json={"confirmed": ["nonexistent"]})
    assert resp.status_code == 400
    assert resp.json()["code"] == "unknown_condition"


def test_conflicting_tags_is_409(client):
    resp = client.post(
        "/api/posterior", json={"confirmed": ["flu"], "rejected": [0]}
    )
    assert resp.status_code == 409
    assert resp.json()["code"] == "conflicting_tags"


def test_bad_observed_value_is_400(client):
    resp = client.post("/api/posterior", json={"observed": {"tok0": 2}})
    assert resp.status_code == 400
    assert resp.json()["code"] == "bad_value"


def test_last_tag_requires_confirmed(client):
    resp = client.post("/api/last-tag", json={"tokens": ["tok0"]})
    assert resp.status_code == 400
    assert resp.json()["code"] == "no_confirmed_tags"


def test_last_tag_requires_candidates(client):
    resp = client.post(
        "/api/last-tag", json={"confirmed": ["flu", "uti"], "rejected": ["gerd"]}
    )
    assert resp.status_code == 422
    assert resp.json()["code"] == "no_candidates"


def test_last_tag_renormalizes_over_candidates(client):
    body = client.post(
        "/api/last-tag", json={"tokens": ["tok0"], "confirmed": ["flu"]}
    ).json()
    assert body["marginals"][0] == 1.0
    assert body["marginals"][1] + body["marginals"][2] == pytest.approx(1.0)
    body = client.post(
        "/api/last-tag",
        json={"tokens": ["tok0"], "confirmed": ["flu"], "rejected": ["uti"]},
    ).json()
    assert body["marginals"][1] == 0.0
    assert body["marginals"][2] == pytest.approx(1.0)
    assert body["diagnostics"]["mode"] == "exact-last-tag"


def test_no_model_loaded_is_503():
    bare = TestClient(create_app(None))
    resp = bare.post("/api/posterior", json={})
    assert resp.status_code == 503
    assert resp.json()["code"] == "model_not_loaded"
    assert bare.get("/healthz").json()["model_loaded"] is False


def test_sampler_override_changes_diagnostics(client):
    body = client.post(
        "/api/posterior",
        json={"tokens": ["tok0"], "sampler": {"chains": 3, "kept": 50}},
    ).json()
    d = body["diagnostics"]
    assert d["chains"] == 3 and d["kept_sweeps"] == 50 and d["mode"] == "gibbs"
