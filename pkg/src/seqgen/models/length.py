"""Target-length model ``p(L | source length)`` estimated from corpus counts."""

from __future__ import annotations

import math
from collections import Counter, defaultdict


class LengthDistribution:
    """Add-one smoothed length table; support is ``1..max_length``."""

    def __init__(self, counts: dict[tuple[int, int], int], max_length: int):
        self.max_length = max_length
        self.counts = Counter({k: int(v) for k, v in counts.items() if v})
        self._rows: dict[int, dict[int, int]] = defaultdict(dict)
        for (s, t), c in self.counts.items():
            if not 1 <= t <= max_length:
                raise ValueError(f"target length {t} outside support 1..{max_length}")
            self._rows[s][t] = c

    @classmethod
    def from_corpus(cls, pairs, max_length: int) -> "LengthDistribution":
        counts = Counter((len(src), len(tgt)) for src, tgt in pairs)
        return cls(counts, max_length)

    def prob(self, L: int, X) -> float:
        if not 1 <= L <= self.max_length:
            return 0.0
        row = self._rows.get(len(X), {})
        return (row.get(L, 0) + 1) / (sum(row.values()) + self.max_length)

    def log_prob(self, L: int, X) -> float:
        p = self.prob(L, X)
        return math.log(p) if p > 0 else -math.inf

    def row(self, X) -> list[float]:
        return [self.prob(L, X) for L in range(1, self.max_length + 1)]

    def to_text(self) -> str:
        lines = [f"# max_length {self.max_length}", "source_len target_len count"]
        for (s, t), c in sorted(self.counts.items()):
            lines.append(f"{s} {t} {c}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LengthDistribution":
        max_length = None
        counts = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("# max_length"):
                max_length = int(line.split()[-1])
                continue
            if line.startswith("source_len"):
                continue
            s, t, c = (int(x) for x in line.split())
            counts[(s, t)] = c
        if max_length is None:
            max_length = max(t for _, t in counts)
        return cls(counts, max_length)


def length_candidates(ldist: LengthDistribution, X, n: int) -> list[tuple[int, float]]:
    """The ``n`` most probable lengths with log-probabilities, shorter first on ties."""
    if n < 1:
        raise ValueError("need at least one length candidate")
    scored = [(L, ldist.prob(L, X)) for L in range(1, ldist.max_length + 1)]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return [(L, math.log(p)) for L, p in scored[:n]]
