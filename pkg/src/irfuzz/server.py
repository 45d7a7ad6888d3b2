"""FastAPI app exposing the generator wire protocol over an n-gram model.

The same protocol is what a remote neural generation server implements;
this local variant exists so the HTTP client path can be exercised and
so the built-in backend can be shared by multiple campaign hosts.
"""

from __future__ import annotations

import threading
from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .generator import NGramModel


class GenerateRequest(BaseModel):
    prefix_tokens: list[str]
    max_new_tokens: int = Field(ge=1)
    temperature: float = Field(ge=0.0)
    num_samples: int = Field(ge=1)
    rng_seed: int = 0


class GenerateResponse(BaseModel):
    samples: list[list[str]]


class TrainRequest(BaseModel):
    programs: list[str]
    epochs: int = Field(ge=1, default=5)


class TrainResponse(BaseModel):
    status: str
    heldout_nll: float


class HealthResponse(BaseModel):
    supports_training: bool
    max_context: int
    deterministic: bool = True


def create_app(model: Optional[NGramModel] = None, order: int = 4) -> FastAPI:
    app = FastAPI(title="irfuzz generator")
    state = {"model": model or NGramModel(order)}
    lock = threading.Lock()

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(
            supports_training=True,
            max_context=state["model"].max_context,
        )

    @app.post("/train", response_model=TrainResponse)
    def train(req: TrainRequest):
        if not req.programs:
            raise HTTPException(400, "programs must be non-empty")
        with lock:
            trained = state["model"].fit(req.programs, req.epochs)
            state["model"] = trained
        n_held = max(1, len(req.programs) // 10)
        return TrainResponse(
            status="ok", heldout_nll=trained.avg_nll(req.programs[-n_held:])
        )

    @app.post("/generate", response_model=GenerateResponse)
    def generate(req: GenerateRequest):
        model = state["model"]
        if not model.trained:
            raise HTTPException(409, "model is untrained; POST /train first")
        samples = model.generate(
            prefix_tokens=req.prefix_tokens,
            max_new_tokens=req.max_new_tokens,
            temperature=req.temperature,
            num_samples=req.num_samples,
            rng_seed=req.rng_seed,
        )
        return GenerateResponse(samples=samples)

    return app
