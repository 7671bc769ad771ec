"""Numerical substrate: reference numpy kernels, the small torch networks, Adam, gradient checks.

The numpy kernels (``softmax``, ``cross_entropy``, ``scaled_dot_attention``,
``adam_update``) are the reference definitions; the torch modules below are
the trainable versions and are checked against them in the tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

PROB_FLOOR = 1e-12
CHECKPOINT_VERSION = 1


class NumericError(FloatingPointError):
    pass


def softmax(logits, temperature: float = 1.0) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("softmax input contains non-finite values")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if math.isinf(temperature):
        return np.full(x.shape, 1.0 / x.shape[-1])
    z = x / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(probs, target: int) -> tuple[float, np.ndarray]:
    """Loss ``-log probs[target]`` and its gradient w.r.t. the logits that produced ``probs``."""
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= target < p.shape[-1]:
        raise IndexError(f"target {target} out of range")
    loss = -math.log(max(p[target], PROB_FLOOR))
    grad = p.copy()
    grad[target] -= 1.0
    return loss, grad


def scaled_dot_attention(Q, K, V, causal: bool = False) -> np.ndarray:
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise ValueError("attention expects 2-D arrays")
    if Q.shape[1] != K.shape[1] or K.shape[0] != V.shape[0]:
        raise ValueError(f"incompatible shapes Q{Q.shape} K{K.shape} V{V.shape}")
    scores = Q @ K.T / math.sqrt(Q.shape[1])
    if causal:
        if Q.shape[0] != K.shape[0]:
            raise ValueError("causal attention needs as many queries as keys")
        scores = np.where(np.tril(np.ones_like(scores, dtype=bool)), scores, -np.inf)
    scores = scores - scores.max(axis=1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=1, keepdims=True)
    return w @ V


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    def make(self, params) -> torch.optim.Adam:
        return torch.optim.Adam(params, lr=self.lr, betas=(self.beta1, self.beta2), eps=self.eps)


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray = None
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        for name in ("grad", "adam_m", "adam_v"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros_like(self.value))
            elif np.shape(getattr(self, name)) != self.value.shape:
                raise ValueError(f"{name} shape mismatch")


def adam_update(p: Parameter, cfg: AdamConfig, step: int) -> Parameter:
    if step < 1:
        raise ValueError("Adam step count starts at 1")
    m = cfg.beta1 * p.adam_m + (1 - cfg.beta1) * p.grad
    v = cfg.beta2 * p.adam_v + (1 - cfg.beta2) * p.grad**2
    m_hat = m / (1 - cfg.beta1**step)
    v_hat = v / (1 - cfg.beta2**step)
    value = p.value - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return Parameter(value, p.grad.copy(), m, v)


# ---------------------------------------------------------------------------
# torch networks


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    d_ff: int = 128
    max_positions: int = 64
    n_segments: int = 2
    causal: bool = False


class Block(nn.Module):
    """Pre-norm transformer block with a single attention head."""

    def __init__(self, d_model: int, d_ff: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        self.ln2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, d_ff), nn.GELU(), nn.Linear(d_ff, d_model))

    def forward(self, x: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
        h = self.ln1(x)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1]) + bias
        x = x + self.proj(torch.softmax(scores, dim=-1) @ v)
        return x + self.ff(self.ln2(x))


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.tok = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos = nn.Embedding(cfg.max_positions, cfg.d_model)
        self.seg = nn.Embedding(cfg.n_segments, cfg.d_model)
        self.blocks = nn.ModuleList(Block(cfg.d_model, cfg.d_ff) for _ in range(cfg.n_layers))
        self.ln = nn.LayerNorm(cfg.d_model)
        self.out = nn.Linear(cfg.d_model, cfg.vocab_size)

    def attention_bias(self, pad_mask: torch.Tensor, dtype) -> torch.Tensor:
        # pad_mask: (B, S) True where padding
        B, S = pad_mask.shape
        bias = torch.zeros(B, 1, S, dtype=dtype)
        bias = bias.masked_fill(pad_mask[:, None, :], float("-inf"))
        if self.cfg.causal:
            future = torch.triu(torch.ones(S, S, dtype=torch.bool), diagonal=1)
            bias = bias.masked_fill(future[None], float("-inf"))
        return bias

    def hidden(self, tokens, positions, segments, pad_mask) -> torch.Tensor:
        x = self.tok(tokens) + self.pos(positions) + self.seg(segments)
        bias = self.attention_bias(pad_mask, x.dtype)
        for block in self.blocks:
            x = block(x, bias)
        return self.ln(x)

    def forward(self, tokens, positions, segments, pad_mask):
        h = self.hidden(tokens, positions, segments, pad_mask)
        return self.out(h), h


class PairBatch:
    """Packs (source, target) pairs as ``source <sep> target <eos>`` with per-segment positions."""

    def __init__(self, pairs, vocab, dtype=torch.long):
        self.offsets = []
        seqs, pos, seg = [], [], []
        for src, tgt in pairs:
            toks = list(src) + [vocab.sep_id] + list(tgt) + [vocab.eos_id]
            seqs.append(toks)
            pos.append(list(range(len(src) + 1)) + list(range(len(tgt) + 1)))
            seg.append([0] * (len(src) + 1) + [1] * (len(tgt) + 1))
            self.offsets.append(len(src) + 1)
        S = max(len(s) for s in seqs)
        B = len(seqs)
        self.tokens = torch.full((B, S), vocab.pad_id, dtype=dtype)
        self.positions = torch.zeros((B, S), dtype=dtype)
        self.segments = torch.zeros((B, S), dtype=dtype)
        self.pad_mask = torch.ones((B, S), dtype=torch.bool)
        for b, (s, p, g) in enumerate(zip(seqs, pos, seg)):
            n = len(s)
            self.tokens[b, :n] = torch.tensor(s)
            self.positions[b, :n] = torch.tensor(p)
            self.segments[b, :n] = torch.tensor(g)
            self.pad_mask[b, :n] = False
        self.lengths = [len(s) for s in seqs]

    def args(self):
        return self.tokens, self.positions, self.segments, self.pad_mask


def gradient_check(
    loss_fn: Callable[[], torch.Tensor],
    params: list[torch.Tensor],
    n_coords: int = 100,
    h: float = 1e-4,
    seed: int = 0,
    analytic: list[torch.Tensor] | None = None,
) -> float:
    """Max relative error between autograd gradients and central differences.

    ``loss_fn`` re-evaluates the scalar loss from the current parameter
    values; parameters should be float64. ``analytic`` overrides the autograd
    gradients (used to confirm the check catches a corrupted gradient).
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    if analytic is None:
        analytic = torch.autograd.grad(loss, params, allow_unused=True)
        analytic = [torch.zeros_like(p) if g is None else g for p, g in zip(params, analytic)]
    sizes = [p.numel() for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    flat = rng.choice(total, size=min(n_coords, total), replace=False)
    bounds = np.cumsum([0] + sizes)
    worst = 0.0
    with torch.no_grad():
        for f in sorted(flat):
            k = int(np.searchsorted(bounds, f, side="right") - 1)
            j = int(f - bounds[k])
            view = params[k].view(-1)
            old = view[j].item()
            view[j] = old + h
            up = loss_fn().item()
            view[j] = old - h
            down = loss_fn().item()
            view[j] = old
            numeric = (up - down) / (2 * h)
            a = analytic[k].reshape(-1)[j].item()
            denom = max(abs(a) + abs(numeric), 1e-6)
            worst = max(worst, abs(a - numeric) / denom)
    return worst


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, kind: str, config: dict, vocab, state: dict[str, torch.Tensor], extra=None):
    """Write a versioned ``.npz`` holding raw parameter arrays plus JSON metadata."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": config,
        "vocab": None
        if vocab is None
        else {
            "tokens": list(vocab.tokens),
            "mask_id": vocab.mask_id,
            "pad_id": vocab.pad_id,
            "sep_id": vocab.sep_id,
            "eos_id": vocab.eos_id,
        },
        "extra": extra or {},
        "params": list(state),
    }
    arrays = {f"p{i}": t.detach().cpu().numpy() for i, t in enumerate(state.values())}
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    return path


def load_checkpoint(path):
    from .core import Vocabulary

    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        state = {name: torch.from_numpy(data[f"p{i}"].copy()) for i, name in enumerate(meta["params"])}
    vocab = None
    if meta["vocab"] is not None:
        v = meta["vocab"]
        vocab = Vocabulary(tuple(v["tokens"]), v["mask_id"], v["pad_id"], v["sep_id"], v["eos_id"])
    return meta, vocab, state


def encoder_config_dict(cfg: EncoderConfig) -> dict:
    return asdict(cfg)
