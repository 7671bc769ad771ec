"""The masked-conditional model interface and the helpers every decoder uses on top of it."""

from __future__ import annotations

import math
from typing import Protocol, runtime_checkable

import numpy as np

from ..core import Sequence, Vocabulary


class MaskedTokenError(ValueError):
    pass


@runtime_checkable
class MaskedConditionalModel(Protocol):
    vocab: Vocabulary
    max_length: int
    supports_exact: bool

    def conditional(self, Y: Sequence, masked_positions, X: Sequence = ()) -> np.ndarray:
        """Rows ``p(y_i | Y with <mask> at masked_positions, X)``, one per position, in the given order."""
        ...

    def conditional_batch(self, queries, X: Sequence = ()) -> list[np.ndarray]:
        ...

    def length_log_prob(self, L: int, X: Sequence = ()) -> float:
        ...


def with_masks(Y: Sequence, positions, mask_id: int) -> Sequence:
    pos = set(positions)
    return tuple(mask_id if i in pos else y for i, y in enumerate(Y))


def check_positions(positions, L: int) -> tuple[int, ...]:
    positions = tuple(positions)
    if not positions:
        raise ValueError("at least one masked position is required")
    for p in positions:
        if not 0 <= p < L:
            raise IndexError(f"position {p} out of range for length {L}")
    return positions


def masked_sweep(model, Y: Sequence, X: Sequence = ()) -> np.ndarray:
    """Row ``i`` is the conditional at ``i`` with only position ``i`` additionally masked.

    Positions that already hold ``<mask>`` share one query, since masking
    them again does not change the input.
    """
    mask = model.vocab.mask_id
    L = len(Y)
    open_positions = [i for i in range(L) if Y[i] == mask]
    queries = []
    if open_positions:
        queries.append((Y, tuple(open_positions)))
    filled = [i for i in range(L) if Y[i] != mask]
    for i in filled:
        queries.append((with_masks(Y, (i,), mask), (i,)))
    results = model.conditional_batch(queries, X)
    rows = np.empty((L, model.vocab.size))
    k = 0
    if open_positions:
        rows[open_positions] = results[0]
        k = 1
    for i, r in zip(filled, results[k:]):
        rows[i] = r[0]
    return rows


def pseudo_log_likelihood(model, Y: Sequence, X: Sequence = (), rows: np.ndarray | None = None) -> float:
    if model.vocab.mask_id in Y:
        raise MaskedTokenError("pseudo log-likelihood is defined for mask-free sequences only")
    if rows is None:
        rows = masked_sweep(model, Y, X)
    total = 0.0
    for i, y in enumerate(Y):
        total += math.log(max(rows[i, y], 1e-300))
    return total


def best_symbol(row: np.ndarray, vocab: Vocabulary) -> int:
    """Argmax over non-special symbols; ties resolve to the lowest id."""
    ids = vocab.content_ids
    return ids[int(np.argmax(row[list(ids)]))]


def top_symbols(row: np.ndarray, vocab: Vocabulary, k: int) -> list[int]:
    ids = np.asarray(vocab.content_ids)
    vals = row[ids]
    order = np.lexsort((ids, -vals))
    return [int(ids[j]) for j in order[:k]]


def sample_symbol(row: np.ndarray, vocab: Vocabulary, rng: np.random.Generator) -> int:
    ids = vocab.content_ids
    p = row[list(ids)]
    p = p / p.sum()
    u = rng.random()
    acc = 0.0
    for sym, q in zip(ids, p):
        acc += q
        if u < acc:
            return sym
    return ids[int(np.flatnonzero(p > 0)[-1])]
