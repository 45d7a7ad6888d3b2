"""Trainable next-token models and the perturbed/greedy generation loop.

The built-in backend is an interpolated n-gram model; a remote server
speaking the JSON wire protocol (POST /generate, POST /train,
GET /health) can be substituted via :class:`HttpBackend`.
"""

from __future__ import annotations

import hashlib
import json
import math
from bisect import bisect_left
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np

from .corpus import Provenance, TestProgram, detokenize, make_program
from .errors import (
    BackendUnavailable,
    DegenerateDistribution,
    EmptyTrainingSet,
    SeedTooShort,
)

BOS = "<s>"
EOS = "</s>"

UNIFORM_FLOOR = 1e-6  # per-vocab-token mass mixed into every distribution
GREEDY_TEMPERATURE = 1e-6  # below this, sampling switches to argmax


@dataclass(frozen=True)
class GenerationConfig:
    temperature: float = 1.0
    prefix_len: int = 3
    candidates_per_seed: int = 4
    token_limit: int = 600
    rng_seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if not (1 <= self.prefix_len <= self.token_limit):
            raise ValueError("need 1 <= prefix_len <= token_limit")
        if self.candidates_per_seed < 1:
            raise ValueError("candidates_per_seed must be >= 1")


class GeneratorBackend(Protocol):
    """Contract every generation backend satisfies."""

    @property
    def supports_training(self) -> bool: ...

    @property
    def max_context(self) -> int: ...

    def fit(self, programs: Sequence[str], epochs: int) -> "GeneratorBackend":
        """Return a backend trained on the given program texts."""
        ...

    def generate(
        self,
        prefix_tokens: Sequence[str],
        max_new_tokens: int,
        temperature: float,
        num_samples: int,
        rng_seed: int,
    ) -> list[list[str]]:
        """Sampled continuations, each excluding the prefix."""
        ...


def _stable_int(s: str) -> int:
    return int.from_bytes(hashlib.sha256(s.encode()).digest()[:8], "big")


class NGramModel:
    """Jelinek-Mercer interpolated n-gram model over lexical tokens.

    Counts cover all context lengths 0..order-1; interpolation weights
    are re-tuned by EM on a 10% held-out split, one pass per epoch.
    A trained model is immutable and thread-safe.
    """

    def __init__(self, order: int = 4):
        if order < 1:
            raise ValueError("order must be >= 1")
        self.order = order
        # counts[k]: (context of length k) -> Counter of next tokens
        self.counts: list[dict[tuple, Counter]] = [
            {} for _ in range(order)
        ]
        self.totals: list[dict[tuple, int]] = [{} for _ in range(order)]
        self.vocab: list[str] = []  # sorted, includes EOS, excludes BOS
        self.weights: list[float] = [1.0 / order] * order
        self._dist_cache: dict[tuple, tuple[list[str], np.ndarray]] = {}

    # -- training ------------------------------------------------------

    @property
    def supports_training(self) -> bool:
        return True

    @property
    def max_context(self) -> int:
        return self.order - 1

    @property
    def trained(self) -> bool:
        return bool(self.vocab)

    def fit(self, programs: Sequence[str], epochs: int = 5) -> "NGramModel":
        from .corpus import tokenize

        if not programs:
            raise EmptyTrainingSet("no programs to train on")
        if epochs < 1:
            raise ValueError("epochs must be >= 1")
        model = NGramModel(self.order)
        token_seqs = [tokenize(t) for t in programs]
        vocab = set()
        for seq in token_seqs:
            vocab.update(seq)
        vocab.add(EOS)
        model.vocab = sorted(vocab)
        for seq in token_seqs:
            model._count_sequence(seq)
        # deterministic 10% held-out split for weight tuning; counts
        # still cover every occurrence
        n_held = max(1, len(token_seqs) // 10)
        held = token_seqs[-n_held:]
        model.weights = list(self.weights)
        for _ in range(epochs):
            model._tune_weights(held)
        return model

    def _count_sequence(self, tokens: Sequence[str]) -> None:
        padded = [BOS] * (self.order - 1) + list(tokens) + [EOS]
        start = self.order - 1
        for pos in range(start, len(padded)):
            tok = padded[pos]
            for k in range(self.order):
                ctx = tuple(padded[pos - k : pos])
                bucket = self.counts[k].setdefault(ctx, Counter())
                bucket[tok] += 1
                self.totals[k][ctx] = self.totals[k].get(ctx, 0) + 1

    def _component_probs(self, ctx: tuple, tok: str) -> list[float]:
        out = []
        for k in range(self.order):
            c = ctx[len(ctx) - k :] if k else ()
            total = self.totals[k].get(c, 0)
            out.append(self.counts[k][c][tok] / total if total else 0.0)
        return out

    def _tune_weights(self, held: Sequence[Sequence[str]]) -> None:
        """One EM pass of deleted interpolation on the held-out split."""
        resp = [0.0] * self.order
        n = 0
        for seq in held:
            padded = [BOS] * (self.order - 1) + list(seq) + [EOS]
            for pos in range(self.order - 1, len(padded)):
                ctx = tuple(padded[pos - self.order + 1 : pos])
                comps = self._component_probs(ctx, padded[pos])
                mix = sum(w * p for w, p in zip(self.weights, comps))
                if mix <= 0:
                    continue
                for k in range(self.order):
                    resp[k] += self.weights[k] * comps[k] / mix
                n += 1
        if n == 0:
            return
        # clamp so every order keeps nonzero weight (unigram floor)
        new = [max(r / n, 1e-4) for r in resp]
        z = sum(new)
        self.weights = [w / z for w in new]
        self._dist_cache.clear()

    # -- inference -----------------------------------------------------

    def next_token_distribution(self, prefix: Sequence[str]) -> dict[str, float]:
        toks, probs = self._dist_arrays(prefix)
        return dict(zip(toks, probs.tolist()))

    def _dist_arrays(self, prefix: Sequence[str]) -> tuple[list[str], np.ndarray]:
        if not self.trained:
            raise EmptyTrainingSet("model is untrained")
        ctx = tuple(prefix)[-(self.order - 1) :] if self.order > 1 else ()
        if len(ctx) < self.order - 1:
            ctx = (BOS,) * (self.order - 1 - len(ctx)) + ctx
        cached = self._dist_cache.get(ctx)
        if cached is not None:
            return cached
        v = len(self.vocab)
        probs = np.zeros(v)
        # fold the weight of unseen contexts down into lower orders
        carry = 0.0
        weights_used = []
        for k in range(self.order - 1, -1, -1):
            c = ctx[len(ctx) - k :] if k else ()
            w = self.weights[k] + (carry if k == 0 else 0.0)
            if k > 0 and self.totals[k].get(c, 0) == 0:
                carry += self.weights[k]
                weights_used.append(0.0)
                continue
            weights_used.append(w)
            total = self.totals[k][c]
            bucket = self.counts[k][c]
            for tok, cnt in bucket.items():
                probs[bisect_left(self.vocab, tok)] += w * cnt / total
        probs = (1.0 - UNIFORM_FLOOR * v) * (probs / probs.sum()) + UNIFORM_FLOOR
        entry = (self.vocab, probs)
        self._dist_cache[ctx] = entry
        return entry

    def avg_nll(self, programs: Sequence[str]) -> float:
        """Average per-token negative log-likelihood."""
        from .corpus import tokenize

        total = 0.0
        n = 0
        for text in programs:
            seq = list(tokenize(text)) + [EOS]
            prefix: list[str] = []
            for tok in seq:
                toks, probs = self._dist_arrays(prefix)
                i = bisect_left(toks, tok)
                p = probs[i] if i < len(toks) and toks[i] == tok else UNIFORM_FLOOR
                total += -math.log(p)
                n += 1
                prefix.append(tok)
        return total / n if n else 0.0

    def generate(
        self,
        prefix_tokens: Sequence[str],
        max_new_tokens: int,
        temperature: float,
        num_samples: int,
        rng_seed: int,
    ) -> list[list[str]]:
        samples = []
        for r in range(num_samples):
            rng = np.random.default_rng([rng_seed & 0xFFFFFFFF, r])
            out: list[str] = []
            ctx = list(prefix_tokens)
            while len(out) < max_new_tokens:
                toks, probs = self._dist_arrays(ctx)
                tok = _sample_from_arrays(toks, probs, temperature, rng)
                if tok == EOS:
                    break
                out.append(tok)
                ctx.append(tok)
            samples.append(out)
        return samples

    # -- persistence ---------------------------------------------------

    SNAPSHOT_FORMAT = 1

    def save(self, path) -> None:
        blob = {
            "format": self.SNAPSHOT_FORMAT,
            "order": self.order,
            "vocab": self.vocab,
            "weights": self.weights,
            "counts": [
                {"\x00".join(ctx): dict(bucket) for ctx, bucket in level.items()}
                for level in self.counts
            ],
        }
        Path(path).write_text(json.dumps(blob))

    @classmethod
    def load(cls, path) -> "NGramModel":
        blob = json.loads(Path(path).read_text())
        if blob.get("format") != cls.SNAPSHOT_FORMAT:
            raise ValueError(f"unknown snapshot format: {blob.get('format')}")
        model = cls(blob["order"])
        model.vocab = list(blob["vocab"])
        model.weights = list(blob["weights"])
        for k, level in enumerate(blob["counts"]):
            for key, bucket in level.items():
                ctx = tuple(key.split("\x00")) if key else ()
                model.counts[k][ctx] = Counter(bucket)
                model.totals[k][ctx] = sum(bucket.values())
        return model


def _sample_from_arrays(
    tokens: Sequence[str],
    probs: np.ndarray,
    temperature: float,
    rng: np.random.Generator,
) -> str:
    total = probs.sum()
    if total <= 0:
        raise DegenerateDistribution("all probabilities are zero")
    if temperature < GREEDY_TEMPERATURE:
        best = probs.max()
        # lexicographically smallest among ties; vocab arrays are sorted
        # but the public dict path may not be
        candidates = [t for t, p in zip(tokens, probs) if p == best]
        return min(candidates)
    scaled = np.power(probs / total, 1.0 / temperature)
    scaled /= scaled.sum()
    return tokens[rng.choice(len(tokens), p=scaled)]


def sample_token(
    dist: dict[str, float], temperature: float, rng: np.random.Generator
) -> str:
    """Sample from dist' proportional to dist^(1/temperature)."""
    tokens = list(dist.keys())
    probs = np.array([dist[t] for t in tokens], dtype=float)
    return _sample_from_arrays(tokens, probs, temperature, rng)


def train_model(
    backend: GeneratorBackend,
    training_set: Sequence[TestProgram],
    epochs: int = 5,
) -> GeneratorBackend:
    if not training_set:
        raise EmptyTrainingSet("training set is empty")
    return backend.fit([p.text for p in training_set], epochs)


def _truncate_at_program_end(
    prefix: Sequence[str], continuation: Sequence[str], token_limit: int
) -> list[str]:
    """Cut a continuation at brace-balance closure and the token budget."""
    tokens = list(prefix)
    balance = sum(t == "{" for t in tokens) - sum(t == "}" for t in tokens)
    opened = "{" in tokens
    if opened and balance <= 0:
        return tokens[:token_limit]
    for t in continuation:
        if len(tokens) >= token_limit:
            break
        tokens.append(t)
        if t == "{":
            opened = True
            balance += 1
        elif t == "}":
            balance -= 1
            if opened and balance <= 0:
                break
    return tokens[:token_limit]


def generate_candidates(
    backend: GeneratorBackend,
    seed: TestProgram,
    cfg: GenerationConfig,
    origin_iteration: int = 0,
) -> list[TestProgram]:
    """Perturbed generation: fan out candidates from a short seed prefix."""
    if len(seed.tokens) < cfg.prefix_len:
        raise SeedTooShort(
            f"seed {seed.id} has {len(seed.tokens)} < {cfg.prefix_len} tokens"
        )
    prefix = list(seed.tokens[: cfg.prefix_len])
    stream_seed = (cfg.rng_seed ^ _stable_int(seed.id)) & 0x7FFFFFFFFFFFFFFF
    raw = backend.generate(
        prefix_tokens=prefix,
        max_new_tokens=cfg.token_limit - cfg.prefix_len,
        temperature=cfg.temperature,
        num_samples=cfg.candidates_per_seed,
        rng_seed=stream_seed,
    )
    out = []
    for continuation in raw:
        tokens = _truncate_at_program_end(prefix, continuation, cfg.token_limit)
        out.append(
            make_program(
                detokenize(tokens),
                provenance=Provenance.GENERATED,
                origin_iteration=origin_iteration,
                parent_id=seed.id,
            )
        )
    return out


def generate_greedy(
    backend: GeneratorBackend,
    seed: TestProgram,
    cfg: Optional[GenerationConfig] = None,
    origin_iteration: int = 0,
) -> TestProgram:
    """Ablation mode: argmax decoding from a 10-token prefix."""
    cfg = cfg or GenerationConfig(prefix_len=10, candidates_per_seed=1)
    greedy_cfg = replace(
        cfg, temperature=0.0, prefix_len=10, candidates_per_seed=1
    )
    return generate_candidates(backend, seed, greedy_cfg, origin_iteration)[0]


class HttpBackend:
    """Client for a remote generator speaking the JSON wire protocol."""

    def __init__(self, base_url: str, client=None, timeout: float = 120.0):
        import httpx

        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(
            base_url=self.base_url, timeout=timeout
        )
        try:
            health = self._get("/health")
        except BackendUnavailable:
            raise
        self._supports_training = bool(health.get("supports_training", False))
        self._max_context = int(health.get("max_context", 0))

    @property
    def supports_training(self) -> bool:
        return self._supports_training

    @property
    def max_context(self) -> int:
        return self._max_context

    def _get(self, path: str) -> dict:
        import httpx

        try:
            resp = self._client.get(path)
            resp.raise_for_status()
            return resp.json()
        except httpx.HTTPError as e:
            raise BackendUnavailable(f"GET {path}: {e}") from e

    def _post(self, path: str, body: dict) -> dict:
        import httpx

        try:
            resp = self._client.post(path, json=body)
            resp.raise_for_status()
            return resp.json()
        except httpx.HTTPError as e:
            raise BackendUnavailable(f"POST {path}: {e}") from e

    def fit(self, programs: Sequence[str], epochs: int) -> "HttpBackend":
        out = self._post(
            "/train", {"programs": list(programs), "epochs": epochs}
        )
        if out.get("status") != "ok":
            raise BackendUnavailable(f"train failed: {out}")
        return self

    def generate(
        self,
        prefix_tokens: Sequence[str],
        max_new_tokens: int,
        temperature: float,
        num_samples: int,
        rng_seed: int,
    ) -> list[list[str]]:
        out = self._post(
            "/generate",
            {
                "prefix_tokens": list(prefix_tokens),
                "max_new_tokens": max_new_tokens,
                "temperature": temperature,
                "num_samples": num_samples,
                "rng_seed": rng_seed,
            },
        )
        return [list(s) for s in out["samples"]]
