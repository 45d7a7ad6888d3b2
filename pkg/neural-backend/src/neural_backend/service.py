"""FastAPI app implementing the generator wire protocol over a CausalLM.

Endpoints: GET /health, POST /train, POST /generate.  Training updates
only the low-rank adapter factors; the base network stays frozen.
/train is exclusive — concurrent training requests are rejected with
409 while one is in flight.
"""

from __future__ import annotations

import hashlib
import threading
from typing import Optional

import torch
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .model import CausalLM
from .tokenizer import BOS, EOS, Vocab, tokenize
from .training import evaluate_nll, heldout_split, train_adapters

GREEDY_TEMPERATURE = 1e-6


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
    token_unit: str = "lexical"


def _sample_seed(rng_seed: int, lane: int) -> int:
    digest = hashlib.sha256(f"{rng_seed}:{lane}".encode()).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFFFFFFFFFFFFFF


@torch.no_grad()
def sample_tokens(
    model: CausalLM,
    vocab: Vocab,
    prefix_tokens: list[str],
    max_new_tokens: int,
    temperature: float,
    num_samples: int,
    rng_seed: int,
) -> list[list[str]]:
    model.eval()
    max_seq = model.model_config.max_seq
    banned = [vocab.pad_id, vocab.unk_id, vocab.bos_id]
    samples = []
    for lane in range(num_samples):
        gen = torch.Generator().manual_seed(_sample_seed(rng_seed, lane))
        ids = vocab.encode([BOS] + list(prefix_tokens))
        out: list[str] = []
        while len(out) < max_new_tokens:
            window = torch.tensor(ids[-max_seq:])
            logits = model(window)[0, -1]
            logits[banned] = float("-inf")
            logits[len(vocab) :] = float("-inf")  # unassigned capacity slots
            if temperature < GREEDY_TEMPERATURE:
                next_id = int(logits.argmax())
            else:
                probs = torch.softmax(logits / temperature, dim=-1)
                next_id = int(torch.multinomial(probs, 1, generator=gen))
            if next_id == vocab.eos_id:
                break
            out.append(vocab.id_to_token[next_id])
            ids.append(next_id)
        samples.append(out)
    return samples


def create_app(model: CausalLM, vocab: Optional[Vocab] = None) -> FastAPI:
    app = FastAPI(title="neural generation backend")
    state = {"model": model, "vocab": vocab}
    train_lock = threading.Lock()

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(
            supports_training=True,
            max_context=state["model"].model_config.max_seq,
        )

    @app.post("/train", response_model=TrainResponse)
    def train(req: TrainRequest):
        if not req.programs:
            raise HTTPException(400, "programs must be non-empty")
        if not train_lock.acquire(blocking=False):
            raise HTTPException(409, "training already in progress")
        try:
            model = state["model"]
            vocab = Vocab.build(
                req.programs, capacity=model.model_config.vocab_size
            )
            token_seqs = [tokenize(t) for t in req.programs]
            train_seqs, held_seqs = heldout_split(token_seqs)
            train_adapters(model, vocab, train_seqs, epochs=req.epochs)
            state["vocab"] = vocab
            nll = evaluate_nll(model, vocab, held_seqs)
            return TrainResponse(status="ok", heldout_nll=nll)
        finally:
            train_lock.release()

    @app.post("/generate", response_model=GenerateResponse)
    def generate(req: GenerateRequest):
        if state["vocab"] is None:
            raise HTTPException(409, "model is untrained; POST /train first")
        samples = sample_tokens(
            state["model"],
            state["vocab"],
            req.prefix_tokens,
            req.max_new_tokens,
            req.temperature,
            req.num_samples,
            req.rng_seed,
        )
        return GenerateResponse(samples=samples)

    return app
