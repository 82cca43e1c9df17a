"""HTTP inference service for interactive tagging.

Stateless: every request carries the full evidence (observed features plus
confirmed/rejected tags) and an optional seed, so identical seeded requests
return identical bodies.  The loaded model is immutable; hot reload swaps the
whole state object atomically.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .infer import Evidence, GibbsConfig, exact_last_tag, gibbs_posterior
from .model import ModelParams, NoiseModel
from .textproc import Vocabulary

DEFAULT_SAMPLER = {"chains": 2, "burn_in": 100, "kept": 500}


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        self.status = status
        self.code = code
        self.message = message


class SamplerOverride(BaseModel):
    chains: int | None = None
    burn_in: int | None = None
    kept: int | None = None


class InferRequest(BaseModel):
    tokens: list[str] = Field(default_factory=list)
    observed: dict[str, int] = Field(default_factory=dict)
    confirmed: list[int | str] = Field(default_factory=list)
    rejected: list[int | str] = Field(default_factory=list)
    mode: str = "gibbs"
    sampler: SamplerOverride | None = None
    seed: int = 0


@dataclass
class ServiceState:
    params: ModelParams
    noise: NoiseModel | None = None
    vocab: Vocabulary | None = None

    def __post_init__(self):
        self.version = self.params.content_hash()
        self.name_to_condition = {
            name: i for i, name in enumerate(self.params.condition_names)
        }
        self.token_to_index = (
            dict(self.vocab.token_to_index) if self.vocab is not None else
            {name: j for j, name in enumerate(self.params.feature_names)}
        )


def _resolve_condition(state: ServiceState, ref: int | str) -> int:
    if isinstance(ref, int) or (isinstance(ref, str) and ref.isdigit()):
        i = int(ref)
        if not 0 <= i < state.params.m:
            raise ApiError(400, "unknown_condition", f"condition index {i} out of range")
        return i
    if ref not in state.name_to_condition:
        raise ApiError(400, "unknown_condition", f"unknown condition {ref!r}")
    return state.name_to_condition[ref]


def _resolve_feature(state: ServiceState, ref: str) -> int:
    if ref.isdigit():
        j = int(ref)
        if not 0 <= j < state.params.n:
            raise ApiError(400, "unknown_token", f"feature index {j} out of range")
        return j
    if ref not in state.token_to_index:
        raise ApiError(400, "unknown_token", f"unknown token {ref!r}")
    return state.token_to_index[ref]


def _parse_request(state: ServiceState, req: InferRequest):
    observed: dict[int, int] = {}
    for tok in req.tokens:
        observed[_resolve_feature(state, tok)] = 1
    for ref, val in req.observed.items():
        if val not in (0, 1):
            raise ApiError(400, "bad_value", "observed values must be 0 or 1")
        observed[_resolve_feature(state, ref)] = val
    confirmed = sorted({_resolve_condition(state, r) for r in req.confirmed})
    rejected = sorted({_resolve_condition(state, r) for r in req.rejected})
    overlap = set(confirmed) & set(rejected)
    if overlap:
        raise ApiError(
            409, "conflicting_tags",
            f"conditions both confirmed and rejected: {sorted(overlap)}",
        )
    return observed, confirmed, rejected


def _sampler_config(req: InferRequest) -> GibbsConfig:
    over = req.sampler or SamplerOverride()
    return GibbsConfig(
        chains=over.chains or DEFAULT_SAMPLER["chains"],
        burn_in=over.burn_in or DEFAULT_SAMPLER["burn_in"],
        kept=over.kept or DEFAULT_SAMPLER["kept"],
        seed=req.seed,
    )


def _suggestions(state: ServiceState, marginals: np.ndarray, exclude: set[int]) -> list[dict]:
    idx = np.array([i for i in range(state.params.m) if i not in exclude], dtype=int)
    order = np.lexsort((idx, -marginals[idx]))
    return [
        {
            "index": int(i),
            "condition": state.params.condition_names[int(i)],
            "probability": float(marginals[int(i)]),
        }
        for i in idx[order]
    ]


def create_app(
    state: ServiceState | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="noisyor tag service")
    app.state.service = state

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message},
        )

    def current() -> ServiceState:
        st = app.state.service
        if st is None:
            raise ApiError(503, "model_not_loaded", "no model is loaded")
        return st

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "model_loaded": app.state.service is not None}

    @app.get("/api/meta")
    def meta():
        st = current()
        return {
            "conditions": list(st.params.condition_names),
            "n_features": st.params.n,
            "tokens": sorted(st.token_to_index.keys()),
            "model_version": st.version,
            "sampler_defaults": dict(DEFAULT_SAMPLER),
        }

    @app.post("/api/posterior")
    def posterior(req: InferRequest):
        st = current()
        observed, confirmed, rejected = _parse_request(st, req)
        config = _sampler_config(req)
        evidence = Evidence(
            observed=observed,
            clamped={**{i: 1 for i in confirmed}, **{i: 0 for i in rejected}},
        )
        marginals = gibbs_posterior(st.params, evidence, config)
        exclude = set(confirmed) | set(rejected)
        return {
            "marginals": [float(v) for v in marginals],
            "suggestions": _suggestions(st, marginals, exclude),
            "confirmed": confirmed,
            "rejected": rejected,
            "model_version": st.version,
            "diagnostics": {
                "mode": "gibbs",
                "chains": config.chains,
                "burn_in": config.burn_in,
                "kept_sweeps": config.kept,
                "seed": req.seed,
            },
        }

    @app.post("/api/last-tag")
    def last_tag(req: InferRequest):
        st = current()
        observed, confirmed, rejected = _parse_request(st, req)
        if not confirmed:
            raise ApiError(400, "no_confirmed_tags", "last-tag mode needs >= 1 confirmed tag")
        if len(confirmed) + len(rejected) >= st.params.m:
            raise ApiError(422, "no_candidates", "all tags confirmed or rejected")
        x = np.zeros(st.params.n, dtype=np.int8)
        for j, v in observed.items():
            x[j] = v
        cands, probs, degenerate = exact_last_tag(st.params, x, confirmed)
        marginals = np.zeros(st.params.m)
        lookup = {int(c): float(p) for c, p in zip(cands, probs)}
        for i in rejected:
            lookup.pop(i, None)
        total = sum(lookup.values())
        if total > 0:
            lookup = {i: p / total for i, p in lookup.items()}
        for i, p in lookup.items():
            marginals[i] = p
        for i in confirmed:
            marginals[i] = 1.0
        exclude = set(confirmed) | set(rejected)
        return {
            "marginals": [float(v) for v in marginals],
            "suggestions": _suggestions(st, marginals, exclude),
            "confirmed": confirmed,
            "rejected": rejected,
            "model_version": st.version,
            "diagnostics": {"mode": "exact-last-tag", "degenerate_mass": degenerate},
        }

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def load_state(model_path: str | Path, vocab_path: str | Path | None = None) -> ServiceState:
    params = ModelParams.load(model_path)
    vocab = Vocabulary.load(vocab_path) if vocab_path else None
    return ServiceState(params=params, noise=params.noise, vocab=vocab)
