"""Tiny causal transformer with frozen base weights and low-rank adapters.

The base network stands in for a pretrained code model: it is created
once by the ``prepare`` command with a fixed seed and never updated.
Fine-tuning touches only the adapter factors A and B attached to the
attention projections and the output head (W' = W + (alpha/r) * B A).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import torch
from torch import nn


@dataclass(frozen=True)
class AdapterConfig:
    rank: int = 8
    alpha: float = 32.0
    dropout: float = 0.1
    learning_rate: float = 5e-5

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 512
    dim: int = 64
    heads: int = 2
    layers: int = 2
    ffn_dim: int = 128
    max_seq: int = 64

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")


class LoRALinear(nn.Module):
    """Frozen linear layer plus a trainable low-rank update."""

    def __init__(self, base: nn.Linear, cfg: AdapterConfig):
        super().__init__()
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        in_f, out_f = base.in_features, base.out_features
        self.lora_a = nn.Parameter(torch.empty(cfg.rank, in_f))
        self.lora_b = nn.Parameter(torch.zeros(out_f, cfg.rank))
        nn.init.kaiming_uniform_(self.lora_a, a=math.sqrt(5))
        self.scaling = cfg.alpha / cfg.rank
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        delta = self.dropout(x) @ self.lora_a.T @ self.lora_b.T
        return self.base(x) + self.scaling * delta


class Block(nn.Module):
    def __init__(self, mc: ModelConfig, ac: AdapterConfig):
        super().__init__()
        self.heads = mc.heads
        self.head_dim = mc.dim // mc.heads
        self.ln1 = nn.LayerNorm(mc.dim)
        self.ln2 = nn.LayerNorm(mc.dim)
        self.q = LoRALinear(nn.Linear(mc.dim, mc.dim), ac)
        self.k = LoRALinear(nn.Linear(mc.dim, mc.dim), ac)
        self.v = LoRALinear(nn.Linear(mc.dim, mc.dim), ac)
        self.o = LoRALinear(nn.Linear(mc.dim, mc.dim), ac)
        self.ffn = nn.Sequential(
            nn.Linear(mc.dim, mc.ffn_dim), nn.GELU(), nn.Linear(mc.ffn_dim, mc.dim)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        h = self.ln1(x)

        def split(proj):
            return proj(h).view(b, t, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.q), split(self.k), split(self.v)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        mask = torch.triu(torch.ones(t, t, dtype=torch.bool), diagonal=1)
        att = att.masked_fill(mask, float("-inf")).softmax(-1)
        out = (att @ v).transpose(1, 2).reshape(b, t, d)
        x = x + self.o(out)
        return x + self.ffn(self.ln2(x))


class CausalLM(nn.Module):
    def __init__(self, mc: ModelConfig, ac: AdapterConfig):
        super().__init__()
        self.model_config = mc
        self.adapter_config = ac
        self.tok_emb = nn.Embedding(mc.vocab_size, mc.dim)
        self.pos_emb = nn.Embedding(mc.max_seq, mc.dim)
        self.blocks = nn.ModuleList(Block(mc, ac) for _ in range(mc.layers))
        self.ln_f = nn.LayerNorm(mc.dim)
        self.lm_head = LoRALinear(nn.Linear(mc.dim, mc.vocab_size), ac)
        # everything except the adapter factors stays frozen
        for name, p in self.named_parameters():
            if "lora_" not in name:
                p.requires_grad_(False)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        t = ids.shape[-1]
        if t > self.model_config.max_seq:
            raise ValueError(f"sequence length {t} exceeds {self.model_config.max_seq}")
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
        x = self.tok_emb(ids) + self.pos_emb(torch.arange(t))
        for block in self.blocks:
            x = block(x)
        return self.lm_head(self.ln_f(x))

    # -- parameter partitions ------------------------------------------

    def adapter_parameters(self) -> Iterator[nn.Parameter]:
        return (p for n, p in self.named_parameters() if "lora_" in n)

    def base_state_dict(self) -> dict[str, torch.Tensor]:
        return {
            n: t.detach().clone()
            for n, t in self.state_dict().items()
            if "lora_" not in n
        }

    def adapter_state_dict(self) -> dict[str, torch.Tensor]:
        return {
            n: t.detach().clone()
            for n, t in self.state_dict().items()
            if "lora_" in n
        }


def build_model(
    mc: ModelConfig = ModelConfig(),
    ac: AdapterConfig = AdapterConfig(),
    seed: int = 0,
) -> CausalLM:
    """Deterministically initialized base model with fresh adapters."""
    torch.manual_seed(seed)
    return CausalLM(mc, ac)


def save_checkpoint(model: CausalLM, path) -> None:
    torch.save(
        {
            "model_config": dataclasses.asdict(model.model_config),
            "adapter_config": dataclasses.asdict(model.adapter_config),
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path, adapter: AdapterConfig | None = None) -> CausalLM:
    blob = torch.load(path, weights_only=True)
    mc = ModelConfig(**blob["model_config"])
    ac = adapter or AdapterConfig(**blob["adapter_config"])
    model = CausalLM(mc, ac)
    state = blob["state_dict"]
    if adapter is not None:
        # adapter override: keep the checkpoint's base, fresh A/B factors
        state = {k: v for k, v in state.items() if "lora_" not in k}
    model.load_state_dict(state, strict=False)
    return model
