"""Toy masked translation model: source and target concatenated, target tokens masked and predicted."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..core import Sequence, Vocabulary
from ..nn import AdamConfig, Encoder, EncoderConfig, PairBatch, load_checkpoint, save_checkpoint
from .base import check_positions, with_masks
from .length import LengthDistribution

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    d_model: int = 64
    n_layers: int = 2
    d_ff: int = 128
    steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    seed: int = 0
    max_length: int = 20
    log_every: int = 200


def sample_mask_fraction(rng: np.random.Generator, n: int | None = None):
    """Fraction of target tokens to mask, drawn uniformly from [0, 1]."""
    return rng.random(n)


def masked_count(fraction: float, L: int) -> int:
    return min(L, max(1, math.ceil(fraction * L)))


class PackedCorpus:
    """Whole corpus as padded tensors, so training batches are plain index selects."""

    def __init__(self, pairs, vocab: Vocabulary):
        batch = PairBatch(pairs, vocab)
        self.tokens, self.positions, self.segments, self.pad_mask = batch.args()
        self.offsets = torch.tensor(batch.offsets)
        self.lengths = torch.tensor(batch.lengths)
        self.tgt_len = torch.tensor([len(t) for _, t in pairs])
        S = self.tokens.shape[1]
        idx = torch.arange(S)[None, :]
        self.target = (idx >= self.offsets[:, None]) & (idx < (self.offsets + self.tgt_len)[:, None])

    def __len__(self):
        return self.tokens.shape[0]

    def select(self, rows: torch.Tensor):
        S = int(self.lengths[rows].max())
        pick = lambda t: t[rows, :S]
        return (
            pick(self.tokens),
            pick(self.positions),
            pick(self.segments),
            pick(self.pad_mask),
            pick(self.target),
            self.offsets[rows],
            self.tgt_len[rows],
        )


class ToyMaskedLM:
    supports_exact = False

    def __init__(self, encoder: Encoder, vocab: Vocabulary, max_length: int, length_model: LengthDistribution | None = None, trained_on: str = ""):
        self.encoder = encoder.eval()
        self.vocab = vocab
        self.max_length = max_length
        self.length_model = length_model
        self.trained_on = trained_on

    @classmethod
    def init(cls, vocab: Vocabulary, max_length: int, d_model=64, n_layers=2, d_ff=128, seed=0, dtype=torch.float32):
        torch.manual_seed(seed)
        cfg = EncoderConfig(
            vocab.size, d_model=d_model, n_layers=n_layers, d_ff=d_ff, max_positions=max_length + 2
        )
        return cls(Encoder(cfg).to(dtype), vocab, max_length)

    @property
    def d_model(self) -> int:
        return self.encoder.cfg.d_model

    @property
    def dtype(self):
        return self.encoder.tok.weight.dtype

    def length_log_prob(self, L: int, X: Sequence = ()) -> float:
        if self.length_model is None:
            return 0.0
        return self.length_model.log_prob(L, X)

    def pair_outputs(self, pairs):
        """Per (X, Y) pair: float64 probability rows and hidden states over the target positions."""
        if any(len(Y) > self.max_length for _, Y in pairs):
            raise ValueError(f"target longer than max_length={self.max_length}")
        batch = PairBatch(list(pairs), self.vocab)
        with torch.no_grad():
            logits, hidden = self.encoder(*batch.args())
        out = []
        for b, (_, Y) in enumerate(pairs):
            o = batch.offsets[b]
            lg = logits[b, o : o + len(Y)].double()
            rows = torch.softmax(lg, dim=-1).numpy()
            out.append((rows, hidden[b, o : o + len(Y)]))
        return out

    def raw_logits(self, seqs, X: Sequence = ()) -> list[np.ndarray]:
        """Unnormalised float64 output scores over the target positions."""
        batch = PairBatch([(X, Y) for Y in seqs], self.vocab)
        with torch.no_grad():
            logits, _ = self.encoder(*batch.args())
        return [logits[b, o : o + len(Y)].double().numpy() for b, (o, Y) in enumerate(zip(batch.offsets, seqs))]

    def target_outputs(self, seqs, X: Sequence = ()):
        return self.pair_outputs([(X, Y) for Y in seqs])

    def conditional(self, Y: Sequence, masked_positions, X: Sequence = ()) -> np.ndarray:
        return self.conditional_batch([(Y, masked_positions)], X)[0]

    def conditional_batch(self, queries, X: Sequence = ()) -> list[np.ndarray]:
        if not queries:
            return []
        seqs, plist = [], []
        for Y, positions in queries:
            positions = check_positions(positions, len(Y))
            seqs.append(with_masks(Y, positions, self.vocab.mask_id))
            plist.append(positions)
        outs = self.target_outputs(seqs, X)
        return [rows[list(p)] for (rows, _), p in zip(outs, plist)]

    def hidden_states(self, Y: Sequence, X: Sequence = ()) -> torch.Tensor:
        return self.target_outputs([Y], X)[0][1]

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        extra = {"max_length": self.max_length, "trained_on": self.trained_on}
        if self.length_model is not None:
            extra["length_model"] = self.length_model.to_text()
        return save_checkpoint(path, "masked_lm", asdict(self.encoder.cfg), self.vocab, self.encoder.state_dict(), extra)

    @classmethod
    def load(cls, path):
        meta, vocab, state = load_checkpoint(path)
        if meta["kind"] != "masked_lm":
            raise ValueError(f"{path} holds a {meta['kind']} checkpoint")
        enc = Encoder(EncoderConfig(**meta["config"]))
        enc = enc.to(next(iter(state.values())).dtype)
        enc.load_state_dict(state)
        extra = meta["extra"]
        lm = LengthDistribution.from_text(extra["length_model"]) if "length_model" in extra else None
        return cls(enc, vocab, extra["max_length"], lm, extra.get("trained_on", ""))


def masked_batch_loss(encoder: Encoder, batch, mask_id: int, rng: np.random.Generator, fractions=None):
    tokens, positions, segments, pad_mask, target, offsets, tgt_len = batch
    B, S = tokens.shape
    if fractions is None:
        fractions = sample_mask_fraction(rng, B)
    k = torch.tensor([masked_count(f, int(n)) for f, n in zip(fractions, tgt_len)])
    scores = torch.from_numpy(rng.random((B, S)))
    scores = scores.masked_fill(~target, 2.0)
    ranks = scores.argsort(dim=1).argsort(dim=1)
    masked = ranks < k[:, None]
    inputs = tokens.masked_fill(masked, mask_id)
    logits, _ = encoder(inputs, positions, segments, pad_mask)
    return F.cross_entropy(logits[masked], tokens[masked])


def train_masked_lm(pairs, vocab: Vocabulary, cfg: TrainConfig = TrainConfig(), on_log=None) -> tuple[ToyMaskedLM, list[float]]:
    """Train on ``(source, target)`` id pairs; returns the model and the per-step loss curve."""
    pairs = [(tuple(s), tuple(t)) for s, t in pairs]
    if not pairs:
        raise ValueError("cannot train on an empty corpus")
    if any(len(t) > cfg.max_length or len(s) > cfg.max_length for s, t in pairs):
        raise ValueError(f"corpus contains sequences longer than max_length={cfg.max_length}")
    model = ToyMaskedLM.init(vocab, cfg.max_length, cfg.d_model, cfg.n_layers, cfg.d_ff, seed=cfg.seed)
    corpus = PackedCorpus(pairs, vocab)
    rng = np.random.default_rng(cfg.seed)
    enc = model.encoder.train()
    opt = AdamConfig(cfg.lr, cfg.beta1, cfg.beta2).make(enc.parameters())
    losses = []
    for step in range(1, cfg.steps + 1):
        rows = torch.from_numpy(rng.integers(0, len(corpus), size=min(cfg.batch_size, len(corpus))))
        loss = masked_batch_loss(enc, corpus.select(rows), vocab.mask_id, rng)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if cfg.log_every and step % cfg.log_every == 0:
            msg = f"masked-lm step {step}: loss {np.mean(losses[-cfg.log_every:]):.4f}"
            log.info(msg)
            if on_log:
                on_log(step, losses)
    model.encoder.eval()
    model.length_model = LengthDistribution.from_corpus(pairs, cfg.max_length)
    model.trained_on = f"{len(pairs)} pairs"
    return model, losses
