"""Decode at several candidate lengths and keep the best-scoring result."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import GenerationTrace, Sequence
from ..models.base import pseudo_log_likelihood
from ..models.length import length_candidates
from .beam import beam_search
from .generate import DecodeConfig, generate


@dataclass
class Candidate:
    length: int
    length_log_prob: float
    sequence: Sequence
    score: float
    trace: GenerationTrace = field(repr=False)


@dataclass
class LengthDecodeResult:
    chosen: Sequence
    chosen_length: int
    candidates: list[Candidate]

    @property
    def chosen_trace(self) -> GenerationTrace:
        return next(c.trace for c in self.candidates if c.sequence == self.chosen)


def decode_at_length(model, strategy, X, L, config: DecodeConfig, rng, length_log_prob):
    if config.is_beam:
        return beam_search(model, strategy, X, L, config, rng, length_log_prob)[0][0]
    return generate(model, strategy, X, L, config, rng, length_log_prob)


def rescore(model, Y: Sequence, X: Sequence, length_log_prob: float, config: DecodeConfig, ar_model=None) -> float:
    if config.rescoring == "ar_model":
        if ar_model is None:
            raise ValueError("ar_model rescoring requested without an AR model")
        return ar_model.log_prob(Y, X)
    score = pseudo_log_likelihood(model, Y, X)
    if config.length_term:
        score += length_log_prob
    return score


def decode_with_length_candidates(model, ldist, X: Sequence, strategy, config: DecodeConfig = DecodeConfig(), ar_model=None, rng=None, decoder=None) -> LengthDecodeResult:
    """Run the configured decoder independently at each of the top-n lengths and rescore the outputs.

    ``decoder(L, length_log_prob)`` replaces the strategy-driven decoder when given.
    """
    X = tuple(X)
    rng = np.random.default_rng(config.seed) if rng is None else rng
    candidates = []
    for L, lp in length_candidates(ldist, X, config.n_length_candidates):
        if decoder is None:
            trace = decode_at_length(model, strategy, X, L, config, rng, lp)
        else:
            trace = decoder(L, lp)
        score = rescore(model, trace.final, X, lp, config, ar_model)
        candidates.append(Candidate(L, lp, trace.final, score, trace))
    # candidates arrive most-probable length first, so max() keeps that one on ties
    best = max(candidates, key=lambda c: c.score)
    return LengthDecodeResult(best.sequence, best.length, candidates)
