"""Sequence, coordinate and trace types shared by every decoder.

A generation trace records the length draw, then one step per iteration:
which positions were selected (the coordinate mask) and which symbols were
written there. Intermediates are stored alongside the steps so analysis code
can read them without replaying.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, NamedTuple

Sequence = tuple[int, ...]
CoordinateMask = tuple[int, ...]

# log-probs are allowed to exceed zero by this much (float rounding)
LOGPROB_SLACK = 1e-9


class InvalidLengthError(ValueError):
    pass


class InconsistentStepError(ValueError):
    pass


class TraceValidationError(ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    mask_id: int
    pad_id: int
    sep_id: int | None = None
    eos_id: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        n = len(self.tokens)
        if len(set(self.tokens)) != n:
            raise ValueError("vocabulary tokens must be unique")
        for name in ("mask_id", "pad_id", "sep_id", "eos_id"):
            value = getattr(self, name)
            if value is not None and not 0 <= value < n:
                raise ValueError(f"{name}={value} out of range for |V|={n}")
        if self.mask_id == self.pad_id:
            raise ValueError("mask_id and pad_id must differ")

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def special_ids(self) -> frozenset[int]:
        ids = {self.mask_id, self.pad_id, self.sep_id, self.eos_id}
        return frozenset(i for i in ids if i is not None)

    @property
    def content_ids(self) -> tuple[int, ...]:
        special = self.special_ids
        return tuple(i for i in range(self.size) if i not in special)

    def index(self, token: str) -> int:
        return self.tokens.index(token)

    def encode(self, tokens) -> Sequence:
        lookup = {tok: i for i, tok in enumerate(self.tokens)}
        return tuple(lookup[t] for t in tokens)

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids]

    @classmethod
    def build(cls, content: list[str], with_markers: bool = True) -> "Vocabulary":
        """Specials first: <pad>, <mask>, then <sep>, <eos> when requested."""
        specials = ["<pad>", "<mask>"] + (["<sep>", "<eos>"] if with_markers else [])
        tokens = tuple(specials + list(content))
        return cls(
            tokens,
            mask_id=1,
            pad_id=0,
            sep_id=2 if with_markers else None,
            eos_id=3 if with_markers else None,
        )


def check_sequence(ids: Sequence, vocab: Vocabulary, allow_empty: bool = False) -> None:
    if not ids and not allow_empty:
        raise InvalidLengthError("sequence must have length >= 1")
    for i in ids:
        if not 0 <= i < vocab.size:
            raise ValueError(f"token id {i} outside vocabulary of size {vocab.size}")


@dataclass(frozen=True)
class GenerationStep:
    coords: CoordinateMask
    replacements: Mapping[int, int]
    coord_log_prob: float = 0.0
    symbol_log_prob: float = 0.0

    @property
    def positions(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.coords) if b)

    @classmethod
    def at(cls, L: int, replacements: Mapping[int, int], coord_log_prob=0.0, symbol_log_prob=0.0):
        coords = tuple(1 if i in replacements else 0 for i in range(L))
        return cls(coords, dict(sorted(replacements.items())), coord_log_prob, symbol_log_prob)


def init_state(L: int, vocab: Vocabulary) -> tuple[Sequence, CoordinateMask]:
    if L < 1:
        raise InvalidLengthError(f"length must be >= 1, got {L}")
    return (vocab.mask_id,) * L, (0,) * L


def apply_step(Y: Sequence, step: GenerationStep) -> Sequence:
    if len(step.coords) != len(Y):
        raise InconsistentStepError(
            f"coordinate mask length {len(step.coords)} != sequence length {len(Y)}"
        )
    for pos in step.replacements:
        if not 0 <= pos < len(Y) or not step.coords[pos]:
            raise InconsistentStepError(f"replacement at unflagged position {pos}")
    flagged = set(step.positions)
    if flagged != set(step.replacements):
        raise InconsistentStepError("flagged positions without a replacement symbol")
    return tuple(step.replacements[i] if b else y for i, (y, b) in enumerate(zip(Y, step.coords)))


def replay(L: int, steps, vocab: Vocabulary) -> list[Sequence]:
    Y, _ = init_state(L, vocab)
    out = [Y]
    for step in steps:
        Y = apply_step(Y, step)
        out.append(Y)
    return out


@dataclass(frozen=True)
class GenerationTrace:
    input: Sequence
    length: int
    length_log_prob: float
    steps: tuple[GenerationStep, ...]
    intermediates: tuple[Sequence, ...]
    vocab: Vocabulary = field(repr=False, compare=False, default=None)
    strategy: str = ""
    config: Mapping[str, Any] = field(default_factory=dict, compare=False)

    @classmethod
    def from_steps(cls, X, L, length_log_prob, steps, vocab, strategy="", config=None):
        steps = tuple(steps)
        return cls(
            tuple(X),
            L,
            float(length_log_prob),
            steps,
            tuple(replay(L, steps, vocab)),
            vocab,
            strategy,
            dict(config or {}),
        )

    @property
    def T(self) -> int:
        return len(self.steps)

    @property
    def final(self) -> Sequence:
        return self.intermediates[-1]

    def selected_positions(self) -> list[tuple[int, ...]]:
        return [s.positions for s in self.steps]


class TraceScore(NamedTuple):
    length_term: float
    coord_term: float
    symbol_term: float
    total: float


def validate_trace(trace: GenerationTrace) -> list[str]:
    """Return every invariant violation found; an empty list means the trace is consistent."""
    problems: list[str] = []
    vocab = trace.vocab
    L = trace.length
    if L < 1:
        return [f"invalid length {L}"]
    if trace.length_log_prob > LOGPROB_SLACK:
        problems.append(f"length log-prob {trace.length_log_prob} > 0")
    if len(trace.intermediates) != trace.T + 1:
        problems.append(
            f"expected {trace.T + 1} intermediates, found {len(trace.intermediates)}"
        )
    for k, Y in enumerate(trace.intermediates):
        if len(Y) != L:
            problems.append(f"intermediate {k + 1} has length {len(Y)} != {L}")
    if trace.intermediates and vocab is not None:
        if any(y != vocab.mask_id for y in trace.intermediates[0]):
            problems.append("initial sequence not empty")
    for t, step in enumerate(trace.steps, start=1):
        if len(step.coords) != L:
            problems.append(f"step {t}: coordinate mask length {len(step.coords)} != {L}")
            continue
        if any(b not in (0, 1) for b in step.coords):
            problems.append(f"step {t}: coordinate bits must be 0/1")
        flagged = set(step.positions)
        keys = set(step.replacements)
        for pos in sorted(keys - flagged):
            problems.append(f"step {t}: replacement at unflagged position {pos}")
        for pos in sorted(flagged - keys):
            problems.append(f"step {t}: flagged position {pos} has no replacement")
        if step.coord_log_prob > LOGPROB_SLACK:
            problems.append(f"step {t}: coord log-prob {step.coord_log_prob} > 0")
        if step.symbol_log_prob > LOGPROB_SLACK:
            problems.append(f"step {t}: symbol log-prob {step.symbol_log_prob} > 0")
        if not (math.isfinite(step.coord_log_prob) or step.coord_log_prob == -math.inf):
            problems.append(f"step {t}: coord log-prob is NaN")
        if vocab is not None:
            for pos, sym in step.replacements.items():
                if not 0 <= sym < vocab.size:
                    problems.append(f"step {t}: symbol {sym} outside vocabulary")
        if t < len(trace.intermediates) and not problems_in_step(problems, t):
            prev, nxt = trace.intermediates[t - 1], trace.intermediates[t]
            if len(prev) == L and len(nxt) == L:
                expected = tuple(
                    step.replacements.get(i, prev[i]) if step.coords[i] else prev[i]
                    for i in range(L)
                )
                if expected != tuple(nxt):
                    problems.append(f"step {t}: stored intermediate disagrees with replay")
    if vocab is not None and trace.intermediates and trace.steps:
        covered = set()
        for step in trace.steps:
            covered.update(step.positions)
        if covered == set(range(L)) and vocab.mask_id in trace.final:
            problems.append("final sequence contains mask tokens although every position was selected")
    return problems


def problems_in_step(problems: list[str], t: int) -> bool:
    prefix = f"step {t}:"
    return any(p.startswith(prefix) for p in problems)


def trace_score(trace: GenerationTrace) -> TraceScore:
    problems = validate_trace(trace)
    if problems:
        raise TraceValidationError(problems)
    coord = 0.0
    symbol = 0.0
    for step in trace.steps:
        coord += step.coord_log_prob
        symbol += step.symbol_log_prob
    total = trace.length_log_prob
    for step in trace.steps:
        total += step.coord_log_prob + step.symbol_log_prob
    return TraceScore(trace.length_log_prob, coord, symbol, total)
