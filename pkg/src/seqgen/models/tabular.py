"""Exact tabular joint ``p(Y | X, L)`` over a tiny vocabulary.

Every conditional is obtained by fixing the observed (non-mask) positions
of the joint table and marginalising the rest, so decoders can be checked
against brute-force enumeration.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from ..core import Sequence, Vocabulary
from .base import check_positions

MAX_TABLE = 10**6


class TabularJointModel:
    supports_exact = True

    def __init__(self, vocab: Vocabulary, tables: dict, length_probs: dict | None = None):
        self.vocab = vocab
        self.content = vocab.content_ids
        self.tables = {}
        for (X, L), table in tables.items():
            table = np.asarray(table, dtype=np.float64)
            if table.shape != (len(self.content),) * L:
                raise ValueError(f"table for L={L} has shape {table.shape}")
            if np.any(table < 0):
                raise ValueError("joint probabilities must be nonnegative")
            if abs(table.sum() - 1.0) > 1e-12:
                raise ValueError(f"joint for X={X}, L={L} sums to {table.sum()}")
            self.tables[(tuple(X), L)] = table
        self.max_length = max(L for _, L in self.tables)
        if length_probs is None:
            length_probs = {}
            for X, L in self.tables:
                length_probs.setdefault(X, {})[L] = 1.0
            for X, row in length_probs.items():
                z = sum(row.values())
                length_probs[X] = {L: p / z for L, p in row.items()}
        self.length_probs = {tuple(X): dict(row) for X, row in length_probs.items()}
        self._cache: dict = {}

    @classmethod
    def random(cls, rng: np.random.Generator, L: int, n_symbols: int = 3, X: Sequence = (), concentration: float = 1.0):
        vocab = default_vocab(n_symbols)
        table = rng.dirichlet(np.full(n_symbols**L, concentration)).reshape((n_symbols,) * L)
        table /= table.sum()
        return cls(vocab, {(tuple(X), L): table})

    @classmethod
    def uniform(cls, L: int, n_symbols: int, X: Sequence = ()):
        table = np.full((n_symbols,) * L, 1.0 / n_symbols**L)
        return cls(default_vocab(n_symbols), {(tuple(X), L): table})

    @classmethod
    def point_mass(cls, Y_content: Sequence, n_symbols: int, X: Sequence = ()):
        """``Y_content`` holds indices into the content symbols, not vocabulary ids."""
        L = len(Y_content)
        table = np.zeros((n_symbols,) * L)
        table[tuple(Y_content)] = 1.0
        return cls(default_vocab(n_symbols), {(tuple(X), L): table})

    def to_ids(self, content_idx) -> Sequence:
        return tuple(self.content[c] for c in content_idx)

    def table(self, X: Sequence, L: int) -> np.ndarray:
        try:
            return self.tables[(tuple(X), L)]
        except KeyError:
            raise KeyError(f"no table for X={tuple(X)} and L={L}") from None

    def length_log_prob(self, L: int, X: Sequence = ()) -> float:
        p = self.length_probs.get(tuple(X), {}).get(L, 0.0)
        return math.log(p) if p > 0 else -math.inf

    def joint_prob(self, Y: Sequence, X: Sequence = ()) -> float:
        index = {v: k for k, v in enumerate(self.content)}
        return float(self.table(X, len(Y))[tuple(index[y] for y in Y)])

    def conditional(self, Y: Sequence, masked_positions, X: Sequence = ()) -> np.ndarray:
        Y = tuple(Y)
        positions = check_positions(masked_positions, len(Y))
        key = (tuple(X), Y, positions)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        table = self.table(X, len(Y))
        index = {v: k for k, v in enumerate(self.content)}
        hidden = set(positions) | {i for i, y in enumerate(Y) if y == self.vocab.mask_id}
        slicer = tuple(slice(None) if i in hidden else index[Y[i]] for i in range(len(Y)))
        sub = table[slicer]
        free = [i for i in range(len(Y)) if i in hidden]
        rows = np.zeros((len(positions), self.vocab.size))
        content = list(self.content)
        for r, pos in enumerate(positions):
            axis = free.index(pos)
            other = tuple(a for a in range(sub.ndim) if a != axis)
            marginal = sub.sum(axis=other) if other else sub
            z = marginal.sum()
            if z > 0:
                rows[r, content] = marginal / z
            else:
                # observed context has zero probability; fall back to uniform
                rows[r, content] = 1.0 / len(content)
        rows.setflags(write=False)
        self._cache[key] = rows
        return rows

    def conditional_batch(self, queries, X: Sequence = ()) -> list[np.ndarray]:
        return [self.conditional(Y, pos, X) for Y, pos in queries]

    def sequences(self, L: int):
        for combo in itertools.product(self.content, repeat=L):
            yield combo


def default_vocab(n_symbols: int) -> Vocabulary:
    return Vocabulary.build([chr(ord("a") + i) for i in range(n_symbols)], with_markers=False)


def tabular_exact_map(model: TabularJointModel, X: Sequence, L: int) -> Sequence:
    """Exhaustive ``argmax_Y p(Y | X, L)``; ties go to the lexicographically smallest id sequence."""
    table = model.table(X, L)
    if table.size > MAX_TABLE:
        raise ValueError("table too large to enumerate")
    flat = int(np.argmax(table.reshape(-1)))
    idx = np.unravel_index(flat, table.shape)
    return model.to_ids(int(i) for i in idx)
