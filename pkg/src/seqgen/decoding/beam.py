"""Length-conditioned beam search over (position, symbol) expansions, and its exhaustive oracle."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ..core import GenerationStep, GenerationTrace, Sequence, init_state
from ..models.base import top_symbols, with_masks
from ..selection import SelectionState, draw_without_replacement, eligible_positions, top_positions
from .generate import DecodeConfig, advance_filled, step_scope, strategy_name
from .schedule import Schedule

MAX_PATHS = 10**6

# names of deliberately injected faults; only the oracle suite's mutation mode sets this
_MUTATIONS: set[str] = set()


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Hypothesis:
    Y: Sequence
    filled: frozenset
    history: tuple
    steps: tuple
    score: float

    @property
    def key(self):
        return tuple((s.positions, tuple(s.replacements[p] for p in s.positions)) for s in self.steps)


def coordinate_candidates(strategy, model, state: SelectionState, o_t: int, Kp: int, eligible, rng):
    """Up to ``Kp`` position sets for one hypothesis, each with its coordinate log-probability."""
    eligible = sorted(eligible)
    if len(eligible) < o_t:
        raise ValueError(f"only {len(eligible)} eligible positions for o_t={o_t}")
    if strategy.mode == "deterministic":
        scores = strategy.position_scores(model, state, eligible)
        if o_t == 1:
            return [((u,), 0.0) for u in top_positions(scores, eligible, Kp)]
        return [(tuple(sorted(top_positions(scores, eligible, o_t))), 0.0)]
    probs = strategy.distribution(model, state, eligible)
    if o_t == 1:
        picks, _ = draw_without_replacement(probs, min(Kp, len(eligible)), rng)
        z = probs.sum()
        return [((u,), math.log(probs[u] / z)) for u in picks]
    out = {}
    for _ in range(Kp):
        order, logp = draw_without_replacement(probs, o_t, rng)
        out.setdefault(tuple(sorted(order)), logp)
    return list(out.items())


def top_joint_symbols(rows: np.ndarray, vocab, Kpp: int) -> list[tuple[tuple[int, ...], float]]:
    """The ``Kpp`` best symbol assignments for independently predicted positions."""
    partial = [((), 0.0)]
    for row in rows:
        options = top_symbols(row, vocab, Kpp)
        merged = [(syms + (v,), s + math.log(row[v])) for syms, s in partial for v in options if row[v] > 0]
        merged.sort(key=lambda item: (-item[1], item[0]))
        partial = merged[:Kpp]
    return partial


def beam_search(model, strategy, X: Sequence, L: int, config: DecodeConfig = DecodeConfig(), rng=None, length_log_prob=None) -> list[tuple[GenerationTrace, float]]:
    X = tuple(X)
    vocab = model.vocab
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if length_log_prob is None:
        length_log_prob = model.length_log_prob(L, X)
    K, Kp, Kpp = config.beam_K, config.beam_Kp, config.beam_Kpp
    n_content = len(vocab.content_ids)
    if Kpp > n_content:
        warnings.warn(f"K''={Kpp} exceeds the {n_content} symbols; clamping")
        Kpp = n_content
    schedule = Schedule.build(config.schedule, L, config.T)
    scope = step_scope(strategy, config.schedule)
    Y0, _ = init_state(L, vocab)
    beam = [Hypothesis(Y0, frozenset(), (), (), length_log_prob)]
    for t, o in enumerate(schedule.counts, start=1):
        expansions = []
        for h in beam:
            state = SelectionState(h.Y, t, h.filled, X, h.history)
            elig = eligible_positions(L, h.filled, scope)
            for positions, clp in coordinate_candidates(strategy, model, state, o, Kp, elig, rng):
                expansions.append((h, positions, clp))
        # one batched query for every (hypothesis, position set) pair of this step
        all_rows = model.conditional_batch([(with_masks(h.Y, pos, vocab.mask_id), pos) for h, pos, _ in expansions], X)
        candidates = []
        for (h, positions, clp), rows in zip(expansions, all_rows):
            targets = positions
            if "beam-off-by-one" in _MUTATIONS:
                targets = tuple((p + 1) % L for p in positions)
            for syms, _ in top_joint_symbols(rows, vocab, Kpp):
                repl = dict(zip(targets, syms))
                slp = 0.0
                for pos, row in zip(targets, rows):
                    slp += math.log(row[repl[pos]])
                step = GenerationStep.at(L, repl, clp, slp)
                candidates.append(
                    Hypothesis(
                        tuple(repl.get(i, y) for i, y in enumerate(h.Y)),
                        advance_filled(h.filled, positions, L),
                        h.history + tuple((t, p) for p in positions),
                        h.steps + (step,),
                        h.score + (clp + slp),
                    )
                )
        candidates.sort(key=lambda hyp: (-hyp.score, hyp.key))
        beam = candidates[:K]
    name = strategy_name(strategy)
    return [
        (GenerationTrace.from_steps(X, L, length_log_prob, h.steps, vocab, strategy=name, config=config.as_dict()), h.score)
        for h in beam
    ]


def count_paths(L: int, T: int, n_symbols: int) -> int:
    return (L**T) * (n_symbols**T)


def brute_force_optimistic(model, X: Sequence, L: int, T: int, length_log_prob=None) -> tuple[GenerationTrace, float]:
    """Exhaustive argmax of the optimistic objective over position orders and symbols.

    Positions follow the same pass rule as the decoders (no repeats until
    every position has been visited); coordinate terms are 0, matching the
    deterministic-strategy convention. Ties resolve lexicographically on
    (positions, symbols) per step.
    """
    X = tuple(X)
    vocab = model.vocab
    content = vocab.content_ids
    if count_paths(L, T, len(content)) > MAX_PATHS:
        raise InstanceTooLarge(f"{count_paths(L, T, len(content))} paths exceed the {MAX_PATHS} limit")
    if length_log_prob is None:
        length_log_prob = model.length_log_prob(L, X)
    Y0, _ = init_state(L, vocab)
    best = None

    def visit(Y, filled, steps, score, key, t):
        nonlocal best
        if t > T:
            if vocab.mask_id in Y:
                return
            cand = (-score, key)
            if best is None or cand < best[0]:
                best = (cand, steps, score)
            return
        for u in eligible_positions(L, filled, "without_replacement"):
            rows = model.conditional(with_masks(Y, (u,), vocab.mask_id), (u,), X)
            for v in content:
                p = rows[0, v]
                if p <= 0:
                    continue
                slp = 0.0 + math.log(p)
                step = GenerationStep.at(L, {u: v}, 0.0, slp)
                visit(
                    tuple(v if i == u else y for i, y in enumerate(Y)),
                    advance_filled(filled, (u,), L),
                    steps + (step,),
                    score + (0.0 + slp),
                    key + (((u,), (v,)),),
                    t + 1,
                )

    visit(Y0, frozenset(), (), length_log_prob, (), 1)
    if best is None:
        raise ValueError("no complete generation path exists")
    _, steps, score = best
    return GenerationTrace.from_steps(X, L, length_log_prob, steps, vocab, strategy="brute_force"), score


__all__ = [
    "Hypothesis",
    "InstanceTooLarge",
    "beam_search",
    "brute_force_optimistic",
    "coordinate_candidates",
    "count_paths",
    "top_joint_symbols",
]
