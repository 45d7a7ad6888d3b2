"""Adapter fine-tuning and held-out evaluation for the generation server."""

from __future__ import annotations

import math
from typing import Sequence

import torch
from torch.nn import functional as F

from .model import CausalLM
from .tokenizer import BOS, EOS, Vocab


def heldout_split(
    token_seqs: Sequence[list[str]],
) -> tuple[list[list[str]], list[list[str]]]:
    """Deterministic 10% tail split; at least one sequence held out."""
    seqs = list(token_seqs)
    n_held = max(1, len(seqs) // 10)
    return seqs[:-n_held] or seqs[-n_held:], seqs[-n_held:]


def _windows(ids: list[int], max_seq: int) -> list[list[int]]:
    if len(ids) <= max_seq:
        return [ids]
    step = max_seq // 2
    return [ids[i : i + max_seq] for i in range(0, len(ids) - 1, step)]


def _encode(vocab: Vocab, tokens: Sequence[str]) -> list[int]:
    return vocab.encode([BOS] + list(tokens) + [EOS])


def train_adapters(
    model: CausalLM,
    vocab: Vocab,
    token_seqs: Sequence[list[str]],
    epochs: int,
    seed: int = 0,
) -> float:
    """Gradient descent on the adapter factors only; returns final loss."""
    max_seq = model.model_config.max_seq
    opt = torch.optim.Adam(
        model.adapter_parameters(), lr=model.adapter_config.learning_rate
    )
    torch.manual_seed(seed)  # fixes dropout masks for reproducible runs
    model.train()
    last = 0.0
    for _ in range(epochs):
        for seq in token_seqs:
            for window in _windows(_encode(vocab, seq), max_seq):
                if len(window) < 2:
                    continue
                ids = torch.tensor(window)
                logits = model(ids[:-1])[0]
                loss = F.cross_entropy(logits, ids[1:])
                opt.zero_grad()
                loss.backward()
                opt.step()
                last = float(loss.detach())
    model.eval()
    return last


@torch.no_grad()
def evaluate_nll(
    model: CausalLM, vocab: Vocab, token_seqs: Sequence[list[str]]
) -> float:
    """Average per-token negative log-likelihood on the given sequences."""
    model.eval()
    max_seq = model.model_config.max_seq
    total = 0.0
    count = 0
    for seq in token_seqs:
        ids_full = _encode(vocab, seq)
        for window in _windows(ids_full, max_seq):
            if len(window) < 2:
                continue
            ids = torch.tensor(window)
            logits = model(ids[:-1])[0]
            logp = F.log_softmax(logits, dim=-1)
            total += float(-logp[torch.arange(len(ids) - 1), ids[1:]].sum())
            count += len(ids) - 1
    if count == 0:
        return math.inf
    return total / count
