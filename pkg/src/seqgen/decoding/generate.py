"""The generation loop: pick positions, mask them, predict them in one query, write the symbols."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..core import GenerationStep, GenerationTrace, Sequence, init_state
from ..models.base import best_symbol, masked_sweep, sample_symbol, with_masks
from ..selection import SelectionState, eligible_positions, select_positions
from .schedule import Schedule


@dataclass(frozen=True)
class DecodeConfig:
    T: int | str = "L"
    schedule: str = "linear_time"
    beam_K: int = 1
    beam_Kp: int = 1
    beam_Kpp: int = 1
    n_length_candidates: int = 1
    rescoring: str = "pseudo_ll"
    length_term: bool = True
    symbols: str = "greedy"
    seed: int = 0

    def __post_init__(self):
        if min(self.beam_K, self.beam_Kp, self.beam_Kpp) < 1:
            raise ValueError("beam sizes must be >= 1")
        if self.n_length_candidates < 1:
            raise ValueError("need at least one length candidate")
        if self.rescoring not in ("pseudo_ll", "ar_model"):
            raise ValueError("rescoring must be pseudo_ll or ar_model")
        if self.symbols not in ("greedy", "sample"):
            raise ValueError("symbols must be greedy or sample")

    @property
    def is_beam(self) -> bool:
        return max(self.beam_K, self.beam_Kp, self.beam_Kpp) > 1

    def as_dict(self) -> dict:
        return asdict(self)


def step_scope(strategy, schedule_mode: str) -> str:
    # annealed refinement re-selects among all positions
    if schedule_mode == "constant_anneal":
        return "all_positions"
    return getattr(strategy, "selection_scope", "without_replacement")


def advance_filled(filled: frozenset, positions, L: int) -> frozenset:
    filled = filled | set(positions)
    return frozenset() if len(filled) == L else frozenset(filled)


def replace_symbols(model, Y: Sequence, positions, X, symbols: str, rng) -> tuple[dict, float]:
    """Mask ``positions`` together, query them in one pass, and choose a symbol for each."""
    vocab = model.vocab
    rows = model.conditional(with_masks(Y, positions, vocab.mask_id), positions, X)
    repl = {}
    logp = 0.0
    for pos, row in zip(positions, rows):
        sym = best_symbol(row, vocab) if symbols == "greedy" else sample_symbol(row, vocab, rng)
        repl[pos] = sym
        logp += math.log(row[sym])
    return repl, logp


def strategy_name(strategy) -> str:
    return getattr(strategy, "name", type(strategy).__name__)


def generate(model, strategy, X: Sequence, L: int, config: DecodeConfig = DecodeConfig(), rng=None, length_log_prob=None) -> GenerationTrace:
    X = tuple(X)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if length_log_prob is None:
        length_log_prob = model.length_log_prob(L, X)
    schedule = Schedule.build(config.schedule, L, config.T)
    scope = step_scope(strategy, config.schedule)
    Y, _ = init_state(L, model.vocab)
    filled = frozenset()
    history = ()
    steps = []
    for t, o in enumerate(schedule.counts, start=1):
        state = SelectionState(Y, t, filled, X, history)
        sel = select_positions(strategy, model, state, o, rng, eligible_positions(L, filled, scope))
        repl, logp = replace_symbols(model, Y, sel.positions, X, config.symbols, rng)
        step = GenerationStep.at(L, repl, sel.log_prob, logp)
        Y = tuple(repl.get(i, y) for i, y in enumerate(Y))
        steps.append(step)
        filled = advance_filled(filled, sel.positions, L)
        history = history + tuple((t, p) for p in sel.order)
    return GenerationTrace.from_steps(
        X, L, length_log_prob, steps, model.vocab, strategy=strategy_name(strategy), config=config.as_dict()
    )


def special_case_decode(model, X: Sequence, L: int, mode: str, k: int | None = None, T: int | None = None, length_log_prob=None) -> GenerationTrace:
    """Fixed-order decoders: ``ar`` (one position per step, left to right), ``semi_ar`` (groups of ``k``),
    ``nar_refine`` (all positions every step, for ``T`` steps)."""
    X = tuple(X)
    if length_log_prob is None:
        length_log_prob = model.length_log_prob(L, X)
    vocab = model.vocab
    Y, _ = init_state(L, vocab)
    steps = []
    if mode == "ar":
        mode, k = "semi_ar", 1
    if mode == "semi_ar":
        if k is None or k < 1:
            raise ValueError("semi-autoregressive decoding needs a group size k >= 1")
        for start in range(0, L, k):
            group = tuple(range(start, min(start + k, L)))
            repl, logp = replace_symbols(model, Y, group, X, "greedy", None)
            steps.append(GenerationStep.at(L, repl, 0.0, logp))
            Y = tuple(repl.get(i, y) for i, y in enumerate(Y))
        name = f"semi_ar(k={k})" if k > 1 else "ar"
    elif mode == "nar_refine":
        T = 1 if T is None else T
        if T < 1:
            raise ValueError("refinement needs T >= 1")
        everything = tuple(range(L))
        for t in range(1, T + 1):
            if t == 1:
                repl, logp = replace_symbols(model, Y, everything, X, "greedy", None)
            else:
                # each position re-predicted given all the others of the current sequence
                rows = masked_sweep(model, Y, X)
                repl, logp = {}, 0.0
                for i in everything:
                    sym = best_symbol(rows[i], vocab)
                    repl[i] = sym
                    logp += math.log(rows[i, sym])
            steps.append(GenerationStep.at(L, repl, 0.0, logp))
            Y = tuple(repl[i] for i in everything)
        name = f"nar_refine(T={T})"
    else:
        raise ValueError(f"unknown special case {mode!r}")
    return GenerationTrace.from_steps(X, L, length_log_prob, steps, vocab, strategy=name)
