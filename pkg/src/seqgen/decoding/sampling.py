"""Stochastic decoders: Gibbs sampling and Monte Carlo marginalisation over generation paths."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..core import GenerationTrace, Sequence, init_state
from ..models.base import pseudo_log_likelihood, sample_symbol, with_masks
from ..selection import PRESETS, SelectionState, select_positions
from .generate import DecodeConfig, generate


def gibbs_sample(model, X: Sequence, L: int, n_steps: int, strategy=None, rng=None) -> list[Sequence]:
    """One coordinate per step, resampled from its conditional; returns the state after every step.

    The chain starts from one parallel sample of all positions given the
    all-mask sequence. ``strategy`` defaults to uniform coordinate selection.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    X = tuple(X)
    rng = np.random.default_rng() if rng is None else rng
    strategy = PRESETS["uniform"] if strategy is None else strategy
    vocab = model.vocab
    mask = vocab.mask_id
    Y, _ = init_state(L, vocab)
    everything = tuple(range(L))
    rows = model.conditional(Y, everything, X)
    Y = tuple(sample_symbol(rows[i], vocab, rng) for i in everything)
    uniform = strategy is PRESETS["uniform"]
    out = []
    for t in range(1, n_steps + 1):
        if uniform:
            i = min(int(rng.random() * L), L - 1)
        else:
            state = SelectionState(Y, t, frozenset(), X)
            i = select_positions(strategy, model, state, 1, rng, everything).positions[0]
        row = model.conditional(with_masks(Y, (i,), mask), (i,), X)[0]
        sym = sample_symbol(row, vocab, rng)
        Y = Y[:i] + (sym,) + Y[i + 1 :]
        out.append(Y)
    return out


@dataclass
class MonteCarloResult:
    best: Sequence
    best_score: float
    traces: list[GenerationTrace]
    scores: list[float]


def monte_carlo_decode(model, strategy, X: Sequence, L: int, M: int, rng=None, config: DecodeConfig = DecodeConfig()) -> MonteCarloResult:
    """Draw ``M`` sampled generation paths and keep the final sequence with the highest pseudo-log-likelihood.

    High variance by construction; kept as the baseline the deterministic
    decoders are compared against.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    cfg = replace(config, symbols="sample")
    traces, scores = [], []
    best, best_score = None, None
    for _ in range(M):
        trace = generate(model, strategy, X, L, cfg, rng)
        score = pseudo_log_likelihood(model, trace.final, tuple(X))
        traces.append(trace)
        scores.append(score)
        if best is None or score > best_score:
            best, best_score = trace.final, score
    return MonteCarloResult(best, best_score, traces, scores)
