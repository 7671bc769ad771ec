"""Coordinate selection: the log-linear family, handcrafted presets, and the shared selection routine.

A strategy scores every position of the current intermediate sequence.
Deterministic strategies take the top scores (ties go to the lowest
position) and contribute a coordinate log-probability of 0. Stochastic
strategies draw positions without replacement from the softmax of the
scores and report the log-probability of the draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .core import Sequence
from .models.base import masked_sweep
from .nn import softmax

DEFAULT_EPS = 1e-6
LOGP_FLOOR = 1e-12
MODES = ("deterministic", "stochastic")
SCOPES = ("without_replacement", "all_positions")


@dataclass(frozen=True)
class StrategyConfig:
    alpha_negent: float = 0.0
    alpha_logp: float = 0.0
    alpha_pos: float = 0.0
    tau: float = 1.0
    eps: float = DEFAULT_EPS
    mode: str = "deterministic"
    selection_scope: str = "without_replacement"
    name: str = "loglinear"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive (use math.inf for uniform)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.selection_scope not in SCOPES:
            raise ValueError(f"selection_scope must be one of {SCOPES}")

    @property
    def alphas(self) -> np.ndarray:
        return np.array([self.alpha_negent, self.alpha_logp, self.alpha_pos])

    @property
    def needs_rows(self) -> bool:
        return not math.isinf(self.tau) and (self.alpha_negent != 0 or self.alpha_logp != 0)

    def position_scores(self, model, state: "SelectionState", eligible) -> np.ndarray:
        L = state.L
        if math.isinf(self.tau):
            return np.zeros(L)
        feats = compute_features(model, state, self.eps, need_rows=self.needs_rows, alphas=self.alphas)
        return feats @ self.alphas

    def distribution(self, model, state, eligible) -> np.ndarray:
        if math.isinf(self.tau):
            return uniform_row(state.L, eligible)
        feats = compute_features(model, state, self.eps, need_rows=self.needs_rows, alphas=self.alphas)
        return log_linear_distribution(feats, self, eligible)

    def describe(self) -> str:
        return self.name


@dataclass
class SelectionState:
    Y: Sequence
    t: int
    filled: frozenset = frozenset()
    X: Sequence = ()
    history: tuple = ()
    rows: np.ndarray | None = field(default=None, repr=False)

    @property
    def L(self) -> int:
        return len(self.Y)

    def sweep(self, model) -> np.ndarray:
        if self.rows is None:
            self.rows = masked_sweep(model, self.Y, self.X)
        return self.rows


class Selection(NamedTuple):
    positions: tuple[int, ...]  # ascending
    order: tuple[int, ...]  # order in which positions were picked
    log_prob: float


def entropy(row: np.ndarray) -> float:
    p = row[row > 0]
    return float(-(p * np.log(p)).sum())


def feature_negent(model, state: SelectionState, i: int) -> float:
    return -entropy(state.sweep(model)[i])


def feature_logp(model, state: SelectionState, i: int) -> float:
    p = state.sweep(model)[i, state.Y[i]]
    return -math.log(max(p, LOGP_FLOOR))


def feature_pos(t: float, i: float, eps: float = DEFAULT_EPS) -> float:
    if not eps > 0:
        raise ValueError("eps must be positive")
    return -math.log(abs(t - i) + eps)


def positional_step(t: int, L: int) -> int:
    """Step index used by the positional feature; restarts every ``L`` steps so refinement passes sweep again."""
    return (t - 1) % L + 1


def compute_features(model, state: SelectionState, eps: float = DEFAULT_EPS, need_rows: bool = True, alphas=None) -> np.ndarray:
    """``(L, 3)`` array of (negent, logp, pos) per position; row-dependent columns are zero when not needed."""
    L = state.L
    feats = np.zeros((L, 3))
    t_pos = positional_step(state.t, L)
    for i in range(L):
        feats[i, 2] = feature_pos(t_pos, i + 1, eps)
    if need_rows:
        rows = state.sweep(model)
        want_negent = alphas is None or alphas[0] != 0
        want_logp = alphas is None or alphas[1] != 0
        for i in range(L):
            if want_negent:
                feats[i, 0] = -entropy(rows[i])
            if want_logp:
                feats[i, 1] = -math.log(max(rows[i, state.Y[i]], LOGP_FLOOR))
    return feats


def uniform_row(L: int, eligible) -> np.ndarray:
    eligible = list(eligible)
    if not eligible:
        raise ValueError("no eligible positions")
    row = np.zeros(L)
    row[eligible] = 1.0 / len(eligible)
    return row


def log_linear_distribution(features: np.ndarray, cfg: StrategyConfig, eligible) -> np.ndarray:
    """Probability over positions, zero outside ``eligible``; ``tau = inf`` is exactly uniform."""
    eligible = sorted(eligible)
    if not eligible:
        raise ValueError("no eligible positions")
    L = features.shape[0]
    if math.isinf(cfg.tau):
        return uniform_row(L, eligible)
    scores = np.asarray(features, dtype=np.float64)[eligible] @ cfg.alphas
    row = np.zeros(L)
    row[eligible] = softmax(scores, cfg.tau)
    return row


def eligible_positions(L: int, filled, scope: str) -> list[int]:
    if scope == "all_positions":
        return list(range(L))
    remaining = [i for i in range(L) if i not in filled]
    return remaining or list(range(L))


def top_positions(scores: np.ndarray, eligible, k: int) -> list[int]:
    return sorted(eligible, key=lambda i: (-scores[i], i))[:k]


def draw_without_replacement(probs: np.ndarray, k: int, rng: np.random.Generator) -> tuple[list[int], float]:
    p = np.array(probs, dtype=np.float64)
    picked = []
    logp = 0.0
    for _ in range(k):
        z = p.sum()
        u = rng.random() * z
        acc = 0.0
        choice = None
        for i in np.flatnonzero(p > 0):
            acc += p[i]
            if u < acc:
                choice = int(i)
                break
        if choice is None:
            choice = int(np.flatnonzero(p > 0)[-1])
        logp += math.log(p[choice] / z)
        picked.append(choice)
        p[choice] = 0.0
    return picked, logp


def select_positions(strategy, model, state: SelectionState, o_t: int, rng=None, eligible=None) -> Selection:
    if o_t < 1:
        raise ValueError("must select at least one position")
    if eligible is None:
        scope = getattr(strategy, "selection_scope", "without_replacement")
        eligible = eligible_positions(state.L, state.filled, scope)
    eligible = sorted(eligible)
    if len(eligible) < o_t:
        raise ValueError(f"only {len(eligible)} eligible positions for o_t={o_t}")
    if strategy.mode == "deterministic":
        scores = strategy.position_scores(model, state, eligible)
        order = top_positions(scores, eligible, o_t)
        return Selection(tuple(sorted(order)), tuple(order), 0.0)
    if rng is None:
        raise ValueError("stochastic selection needs an rng")
    probs = strategy.distribution(model, state, eligible)
    order, logp = draw_without_replacement(probs, o_t, rng)
    return Selection(tuple(sorted(order)), tuple(order), logp)


PRESETS = {
    "uniform": StrategyConfig(tau=math.inf, mode="stochastic", name="uniform"),
    "left2right": StrategyConfig(alpha_pos=1.0, name="left2right"),
    "least2most": StrategyConfig(alpha_logp=1.0, name="least2most"),
    "easy_first": StrategyConfig(alpha_negent=1.0, alpha_logp=1.0, name="easy_first"),
    "hard_first": StrategyConfig(alpha_negent=-1.0, alpha_logp=-1.0, name="hard_first"),
}


def make_preset(name: str, **overrides) -> StrategyConfig:
    key = name.replace("-", "_")
    if key not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[key]
    return replace(cfg, **overrides) if overrides else cfg


def parse_strategy(spec: str, masked_model=None):
    """``preset:<name>``, ``loglinear:a_ne=..,a_lp=..,a_pos=..,tau=..`` or ``policy:<checkpoint>``."""
    kind, _, rest = spec.partition(":")
    if kind == "preset":
        return make_preset(rest)
    if kind == "loglinear":
        keys = {"a_ne": "alpha_negent", "a_lp": "alpha_logp", "a_pos": "alpha_pos", "tau": "tau", "eps": "eps"}
        kwargs = {}
        for item in filter(None, rest.split(",")):
            k, _, v = item.partition("=")
            k = k.strip()
            if k == "mode":
                kwargs["mode"] = v.strip()
            elif k in keys:
                kwargs[keys[k]] = float(v)
            else:
                raise ValueError(f"unknown log-linear key {k!r}")
        if math.isinf(kwargs.get("tau", 1.0)):
            kwargs.setdefault("mode", "stochastic")
        return StrategyConfig(name=spec, **kwargs)
    if kind == "policy":
        from .rl import PolicyStrategy

        if masked_model is None:
            raise ValueError("a policy strategy needs the masked model it was trained on")
        return PolicyStrategy.load(rest, masked_model)
    raise ValueError(f"cannot parse strategy spec {spec!r}")
