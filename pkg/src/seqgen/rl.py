"""Learned coordinate selection: policy and value networks over masked-model hidden states, trained with PPO.

An episode decodes one target in linear time. At each step the policy
samples an unfilled position, the masked model fills it greedily, and the
reward is the drop in edit distance to the reference.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .core import Sequence
from .models.base import best_symbol
from .nn import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit costs; mask ids are ordinary symbols."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def step_reward(Y_t: Sequence, Y_t1: Sequence, Y_ref: Sequence) -> int:
    return edit_distance(Y_t, Y_ref) - edit_distance(Y_t1, Y_ref)


# ---------------------------------------------------------------------------
# networks


class HistorySummary(nn.Module):
    """Mean of step embedding plus hidden state over the last ``k`` selections."""

    def __init__(self, d_model: int, k: int, max_steps: int = 64):
        super().__init__()
        self.k = k
        self.d_model = d_model
        self.step = nn.Embedding(max_steps + 1, d_model)
        nn.init.normal_(self.step.weight, std=0.02)

    def forward(self, steps: torch.Tensor, hidden: torch.Tensor, count: torch.Tensor) -> torch.Tensor:
        """``steps`` (B, k) step indices, ``hidden`` (B, k, d), ``count`` (B,) valid entries; returns (B, d)."""
        B = hidden.shape[0]
        if self.k == 0:
            return hidden.new_zeros(B, self.d_model)
        valid = (torch.arange(hidden.shape[1]) < count[:, None]).to(hidden.dtype)
        summed = ((self.step(steps) + hidden) * valid[..., None]).sum(1)
        return summed / count.clamp(min=1)[:, None].to(hidden.dtype)


class PolicyNet(nn.Module):
    def __init__(self, d_model: int, hidden: int = 128, k: int = 0, max_steps: int = 64):
        super().__init__()
        self.history = HistorySummary(d_model, k, max_steps)
        self.fc1 = nn.Linear(2 * d_model, hidden)
        self.fc2 = nn.Linear(hidden, 1)
        # zero output layer: the untrained policy is uniform
        nn.init.zeros_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)

    def scores(self, H: torch.Tensor, hbar: torch.Tensor) -> torch.Tensor:
        z = torch.cat([H, hbar[:, None, :].expand_as(H)], dim=-1)
        return self.fc2(torch.tanh(self.fc1(z))).squeeze(-1)

    def log_probs(self, H, hbar, eligible: torch.Tensor) -> torch.Tensor:
        """Log-softmax over eligible positions; ineligible entries are -inf."""
        s = self.scores(H, hbar).masked_fill(~eligible, -math.inf)
        return torch.log_softmax(s, dim=-1)


class ValueNet(nn.Module):
    def __init__(self, d_model: int):
        super().__init__()
        self.fc = nn.Linear(2 * d_model, 1)

    def forward(self, H, hbar, present: torch.Tensor) -> torch.Tensor:
        w = present.to(H.dtype)
        mean_h = (H * w[..., None]).sum(1) / w.sum(1, keepdim=True)
        return self.fc(torch.cat([mean_h, hbar], dim=-1)).squeeze(-1)


# ---------------------------------------------------------------------------
# episodes and buffer


@dataclass
class Transition:
    H: torch.Tensor  # (L, d) hidden states of the state
    hist_steps: tuple
    hist_hidden: torch.Tensor  # (n, d), n <= k
    eligible: tuple
    action: int
    log_prob: float
    value: float
    reward: float
    ret: float = 0.0
    advantage: float = 0.0


@dataclass
class Episode:
    X: Sequence
    reference: Sequence
    transitions: list[Transition]
    sequences: list[Sequence]  # Y^1 .. Y^{T+1}
    gamma: float

    @property
    def total_reward(self) -> float:
        return float(sum(tr.reward for tr in self.transitions))

    @property
    def actions(self) -> list[int]:
        return [tr.action for tr in self.transitions]

    def telescopes(self) -> bool:
        """Undiscounted return equals the edit-distance drop from the first to the last sequence."""
        drop = edit_distance(self.sequences[0], self.reference) - edit_distance(self.sequences[-1], self.reference)
        return sum(tr.reward for tr in self.transitions) == drop


class FifoBuffer:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)
        self._next = 0

    def __len__(self):
        return len(self._items)

    def add(self, item):
        self._items.append((self._next, item))
        self._next += 1

    def extend(self, items):
        for item in items:
            self.add(item)

    @property
    def sequence_numbers(self) -> list[int]:
        return [n for n, _ in self._items]

    def items(self) -> list:
        return [it for _, it in self._items]

    def sample(self, n: int, rng: np.random.Generator) -> list:
        snapshot = self.items()
        idx = rng.choice(len(snapshot), size=min(n, len(snapshot)), replace=False)
        return [snapshot[i] for i in sorted(idx)]


@dataclass
class PpoConfig:
    clip_epsilon: float = 0.2
    gamma: float = 0.9
    history_k: int = 0
    generation_batch: int = 16
    buffer_capacity: int = 1000
    update_batch: int = 128
    value_weight: float = 0.5
    epochs: int = 1
    iterations: int = 200
    lr: float = 1e-3
    hidden: int = 128
    gae: bool = False
    gae_lambda: float = 0.95
    normalize_advantages: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.clip_epsilon < 1:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.history_k < 0:
            raise ValueError("history_k must be >= 0")


# ---------------------------------------------------------------------------
# rollouts


def _history_tensors(entries, k: int, d: int, dtype):
    """Pad per-row history lists [(step, hidden)] to tensors of width max(k, 1)."""
    width = max(k, 1)
    B = len(entries)
    steps = torch.zeros(B, width, dtype=torch.long)
    hidden = torch.zeros(B, width, d, dtype=dtype)
    count = torch.zeros(B, dtype=torch.long)
    for b, ent in enumerate(entries):
        ent = ent[-k:] if k else ()
        for j, (s, h) in enumerate(ent):
            steps[b, j] = s
            hidden[b, j] = h
        count[b] = len(ent)
    return steps, hidden, count


def _pad_states(Hs: list[torch.Tensor], eligibles: list):
    B = len(Hs)
    Lmax = max(H.shape[0] for H in Hs)
    d = Hs[0].shape[1]
    H = torch.zeros(B, Lmax, d, dtype=Hs[0].dtype)
    elig = torch.zeros(B, Lmax, dtype=torch.bool)
    present = torch.zeros(B, Lmax, dtype=torch.bool)
    for b, (h, e) in enumerate(zip(Hs, eligibles)):
        H[b, : h.shape[0]] = h
        present[b, : h.shape[0]] = True
        elig[b, list(e)] = True
    return H, elig, present


def rollout_batch(policy: PolicyNet, value: ValueNet, model, pairs, cfg: PpoConfig, rng: np.random.Generator, greedy: bool = False) -> list[Episode]:
    """Linear-time episodes for ``(X, Y_ref)`` pairs, one model forward per step across the batch."""
    vocab = model.vocab
    mask = vocab.mask_id
    k = policy.history.k
    d = model.d_model
    states = [[mask] * len(Y) for _, Y in pairs]
    unfilled = [set(range(len(Y))) for _, Y in pairs]
    histories = [[] for _ in pairs]
    episodes = [Episode(tuple(X), tuple(Y), [], [tuple(s)], cfg.gamma) for (X, Y), s in zip(pairs, states)]
    dists = [edit_distance(s, Y) for s, (_, Y) in zip(states, pairs)]
    t = 0
    while any(unfilled):
        t += 1
        live = [b for b in range(len(pairs)) if unfilled[b]]
        outs = model.pair_outputs([(pairs[b][0], tuple(states[b])) for b in live])
        Hs = [h.to(torch.float32) for _, h in outs]
        elig_lists = [sorted(unfilled[b]) for b in live]
        H, elig, present = _pad_states(Hs, elig_lists)
        hs, hh, hc = _history_tensors([histories[b] for b in live], k, d, H.dtype)
        with torch.no_grad():
            hbar = policy.history(hs, hh, hc)
            logp = policy.log_probs(H, hbar, elig)
            vals = value(H, hbar, present)
        for n, b in enumerate(live):
            lp = logp[n, : Hs[n].shape[0]].double().numpy()
            if greedy:
                a = max(elig_lists[n], key=lambda i: (lp[i], -i))
            else:
                p = np.exp(lp)
                p = p / p.sum()
                a = int(rng.choice(len(p), p=p))
            rows = outs[n][0]
            sym = best_symbol(rows[a], vocab)
            states[b][a] = sym
            new = tuple(states[b])
            Y_ref = pairs[b][1]
            d_new = edit_distance(new, Y_ref)
            reward = dists[b] - d_new
            dists[b] = d_new
            present_hist = tuple(histories[b][-k:]) if k else ()
            episodes[b].transitions.append(
                Transition(
                    Hs[n],
                    tuple(s for s, _ in present_hist),
                    torch.stack([h for _, h in present_hist]) if present_hist else torch.zeros(0, d),
                    tuple(elig_lists[n]),
                    a,
                    float(lp[a]),
                    float(vals[n]),
                    float(reward),
                )
            )
            episodes[b].sequences.append(new)
            if k:
                histories[b].append((t, Hs[n][a]))
            unfilled[b].discard(a)
    for ep in episodes:
        compute_advantages(ep, cfg.gamma, gae_lambda=cfg.gae_lambda if cfg.gae else None)
    return episodes


def rollout(policy, value, model, X, Y_ref, cfg: PpoConfig, rng, greedy: bool = False) -> Episode:
    return rollout_batch(policy, value, model, [(X, Y_ref)], cfg, rng, greedy)[0]


def compute_advantages(episode: Episode, gamma: float, gae_lambda: float | None = None):
    """Discounted returns G_t and advantages; Monte Carlo G_t - V(s_t) unless ``gae_lambda`` is given."""
    trs = episode.transitions
    G = 0.0
    for tr in reversed(trs):
        G = tr.reward + gamma * G
        tr.ret = G
    if gae_lambda is None:
        for tr in trs:
            tr.advantage = tr.ret - tr.value
    else:
        A = 0.0
        next_v = 0.0
        for tr in reversed(trs):
            delta = tr.reward + gamma * next_v - tr.value
            A = delta + gamma * gae_lambda * A
            tr.advantage = A
            next_v = tr.value
    return [tr.ret for tr in trs], [tr.advantage for tr in trs]


# ---------------------------------------------------------------------------
# loss and training


def clipped_surrogate(ratio: torch.Tensor, advantage: torch.Tensor, eps: float) -> torch.Tensor:
    """Per-sample min(rho A, clip(rho, 1-eps, 1+eps) A)."""
    return torch.minimum(ratio * advantage, ratio.clamp(1 - eps, 1 + eps) * advantage)


@dataclass
class PpoStats:
    loss: torch.Tensor
    policy_loss: float
    value_loss: float
    clip_fraction: float


def ppo_loss(batch: list[Transition], policy: PolicyNet, value: ValueNet, cfg: PpoConfig) -> PpoStats:
    dtype = policy.fc1.weight.dtype
    H, elig, present = _pad_states([tr.H.to(dtype) for tr in batch], [tr.eligible for tr in batch])
    d = H.shape[-1]
    entries = [list(zip(tr.hist_steps, tr.hist_hidden.to(dtype))) for tr in batch]
    hs, hh, hc = _history_tensors(entries, policy.history.k, d, dtype)
    hbar = policy.history(hs, hh, hc)
    logp = policy.log_probs(H, hbar, elig)
    actions = torch.tensor([tr.action for tr in batch])
    new_logp = logp.gather(1, actions[:, None]).squeeze(1)
    old_logp = torch.tensor([tr.log_prob for tr in batch], dtype=dtype)
    adv = torch.tensor([tr.advantage for tr in batch], dtype=dtype)
    if cfg.normalize_advantages and len(batch) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    ret = torch.tensor([tr.ret for tr in batch], dtype=dtype)
    ratio = torch.exp(new_logp - old_logp)
    policy_term = -clipped_surrogate(ratio, adv, cfg.clip_epsilon).mean()
    value_term = ((value(H, hbar, present) - ret) ** 2).mean()
    clipped = ((ratio - 1).abs() > cfg.clip_epsilon).to(dtype).mean()
    return PpoStats(policy_term + cfg.value_weight * value_term, float(policy_term.detach()), float(value_term.detach()), float(clipped))


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    @property
    def rewards(self) -> list[float]:
        return [r["mean_reward"] for r in self.rows]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["iteration", "mean_reward", "value_loss", "policy_loss", "clip_fraction"])
            w.writeheader()
            w.writerows(self.rows)


def mean_episode_reward(episodes) -> float:
    return float(np.mean([ep.total_reward for ep in episodes]))


def train_policy(model, pairs, cfg: PpoConfig = PpoConfig(), rng=None, on_log=None, episode_hook=None):
    """PPO over rollouts against a frozen masked model; returns (policy, value, log)."""
    if not pairs:
        raise ValueError("empty corpus")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    torch.manual_seed(cfg.seed)
    policy = PolicyNet(model.d_model, cfg.hidden, cfg.history_k, model.max_length)
    value = ValueNet(model.d_model)
    params = list(policy.parameters()) + list(value.parameters())
    opt = torch.optim.Adam(params, lr=cfg.lr)
    buffer = FifoBuffer(cfg.buffer_capacity)
    out = TrainLog()
    for it in range(1, cfg.iterations + 1):
        idx = rng.choice(len(pairs), size=min(cfg.generation_batch, len(pairs)), replace=False)
        episodes = rollout_batch(policy, value, model, [pairs[i] for i in idx], cfg, rng)
        if episode_hook is not None:
            for ep in episodes:
                episode_hook(ep)
        for ep in episodes:
            buffer.extend(ep.transitions)
        stats = []
        for _ in range(cfg.epochs):
            batch = buffer.sample(cfg.update_batch, rng)
            st = ppo_loss(batch, policy, value, cfg)
            opt.zero_grad()
            st.loss.backward()
            if cfg.lr > 0:
                opt.step()
            stats.append(st)
        row = {
            "iteration": it,
            "mean_reward": mean_episode_reward(episodes),
            "value_loss": float(np.mean([s.value_loss for s in stats])),
            "policy_loss": float(np.mean([s.policy_loss for s in stats])),
            "clip_fraction": float(np.mean([s.clip_fraction for s in stats])),
        }
        out.rows.append(row)
        if on_log is not None:
            on_log(row)
    return policy, value, out


def uniform_baseline_reward(model, pairs, cfg: PpoConfig = PpoConfig(), rng=None, repeats: int = 1) -> float:
    """Mean episodic reward when positions are drawn uniformly (an untrained policy is exactly uniform)."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    policy = PolicyNet(model.d_model, cfg.hidden, cfg.history_k, model.max_length)
    value = ValueNet(model.d_model)
    eps = []
    for _ in range(repeats):
        eps += rollout_batch(policy, value, model, pairs, cfg, rng)
    return mean_episode_reward(eps)


def evaluate_policy(policy, value, model, pairs, cfg: PpoConfig = PpoConfig(), greedy: bool = True, rng=None) -> float:
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    return mean_episode_reward(rollout_batch(policy, value, model, pairs, cfg, rng, greedy=greedy))


# ---------------------------------------------------------------------------
# decoding with a trained policy


class PolicyStrategy:
    """A trained policy as a deterministic coordinate-selection strategy (argmax over eligible positions)."""

    mode = "deterministic"
    selection_scope = "without_replacement"

    def __init__(self, policy: PolicyNet, masked_model, name: str = "learned"):
        self.policy = policy
        self.model = masked_model
        self.name = name

    def _features(self, state):
        X = tuple(state.X)
        Y = tuple(state.Y)
        k = self.policy.history.k
        recent = state.history[-k:] if k else ()
        seqs = [Y]
        for j, _ in recent:
            # the state in which step j chose: every position picked at step >= j is still masked
            later = {p for s, p in state.history if s >= j}
            seqs.append(tuple(self.model.vocab.mask_id if i in later else y for i, y in enumerate(Y)))
        outs = self.model.pair_outputs([(X, s) for s in seqs])
        H = outs[0][1].to(torch.float32)
        entries = [(j, outs[n + 1][1][p].to(torch.float32)) for n, (j, p) in enumerate(recent)]
        hs, hh, hc = _history_tensors([entries], k, H.shape[1], H.dtype)
        with torch.no_grad():
            hbar = self.policy.history(hs, hh, hc)
        return H[None], hbar

    def position_scores(self, model, state, eligible) -> np.ndarray:
        H, hbar = self._features(state)
        with torch.no_grad():
            return self.policy.scores(H, hbar)[0].double().numpy()

    def distribution(self, model, state, eligible) -> np.ndarray:
        H, hbar = self._features(state)
        elig = torch.zeros(1, H.shape[1], dtype=torch.bool)
        elig[0, list(eligible)] = True
        with torch.no_grad():
            return self.policy.log_probs(H, hbar, elig)[0].exp().double().numpy()

    def save(self, path, cfg: PpoConfig | None = None):
        config = {"d_model": self.policy.history.d_model, "hidden": self.policy.fc1.out_features, "k": self.policy.history.k,
                  "max_steps": self.policy.history.step.num_embeddings - 1}
        extra = {"ppo": asdict(cfg)} if cfg is not None else {}
        return save_checkpoint(path, "policy", config, None, self.policy.state_dict(), extra)

    @classmethod
    def load(cls, path, masked_model, name: str | None = None) -> "PolicyStrategy":
        meta, _, state = load_checkpoint(path)
        if meta["kind"] != "policy":
            raise ValueError(f"{path} holds a {meta['kind']} checkpoint")
        c = meta["config"]
        policy = PolicyNet(c["d_model"], c["hidden"], c["k"], c["max_steps"])
        policy.load_state_dict(state)
        return cls(policy, masked_model, name or "learned")


__all__ = [
    "Episode",
    "FifoBuffer",
    "HistorySummary",
    "PolicyNet",
    "PolicyStrategy",
    "PpoConfig",
    "TrainLog",
    "Transition",
    "ValueNet",
    "clipped_surrogate",
    "compute_advantages",
    "edit_distance",
    "evaluate_policy",
    "mean_episode_reward",
    "ppo_loss",
    "rollout",
    "rollout_batch",
    "step_reward",
    "train_policy",
    "uniform_baseline_reward",
]
