"""How many positions are replaced at each iteration."""

from __future__ import annotations

import math
from dataclasses import dataclass

MODES = ("linear_time", "constant_ceil", "constant_anneal")


def resolve_T(T, L: int) -> int:
    """Budget spec to an iteration count: an int, ``"L"``, ``"2L"``, ``"L/2"`` (ceil) or ``"<n>L"``."""
    if isinstance(T, int):
        value = T
    else:
        s = str(T).strip().replace(" ", "")
        if s.isdigit():
            value = int(s)
        elif s.endswith("L") and (s[:-1] == "" or s[:-1].isdigit()):
            value = (int(s[:-1]) if s[:-1] else 1) * L
        elif s.startswith("L/") and s[2:].isdigit():
            value = math.ceil(L / int(s[2:]))
        else:
            raise ValueError(f"cannot read iteration budget {T!r}")
    if value < 1:
        raise ValueError("iteration budget must be >= 1")
    return value


def schedule_tokens(mode: str, L: int, T: int) -> list[int]:
    if L < 1 or T < 1:
        raise ValueError("need L >= 1 and T >= 1")
    if mode == "linear_time":
        return [1] * T
    if mode == "constant_ceil":
        width = math.ceil(L / T)
        total = max(L, T)
        out = []
        remaining = total
        for t in range(1, T + 1):
            # leave at least one position for each later step
            o = min(width, remaining - (T - t))
            out.append(o)
            remaining -= o
        return out
    if mode == "constant_anneal":
        if T == 1:
            return [L]
        out = []
        for t in range(1, T + 1):
            x = L + (1 - L) * (t - 1) / (T - 1)
            out.append(max(1, math.floor(x + 0.5)))
        return out
    raise ValueError(f"unknown schedule {mode!r}; expected one of {MODES}")


@dataclass(frozen=True)
class Schedule:
    mode: str
    counts: tuple[int, ...]

    @classmethod
    def build(cls, mode: str, L: int, T) -> "Schedule":
        return cls(mode, tuple(schedule_tokens(mode, L, resolve_T(T, L))))

    @property
    def T(self) -> int:
        return len(self.counts)
