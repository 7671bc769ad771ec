"""Left-to-right rescorer over ``source <sep> target <eos>`` with causal attention."""

from __future__ import annotations

import logging
from dataclasses import asdict

import numpy as np
import torch
import torch.nn.functional as F

from ..core import Sequence, Vocabulary
from ..nn import AdamConfig, Encoder, EncoderConfig, PairBatch, load_checkpoint, save_checkpoint
from .base import MaskedTokenError
from .masked_lm import PackedCorpus, TrainConfig

log = logging.getLogger(__name__)


class ARModel:
    def __init__(self, encoder: Encoder, vocab: Vocabulary, max_length: int):
        if not encoder.cfg.causal:
            raise ValueError("AR model needs a causal encoder")
        self.encoder = encoder.eval()
        self.vocab = vocab
        self.max_length = max_length

    @classmethod
    def init(cls, vocab: Vocabulary, max_length: int, d_model=64, n_layers=2, d_ff=128, seed=0, dtype=torch.float32):
        torch.manual_seed(seed)
        cfg = EncoderConfig(vocab.size, d_model, n_layers, d_ff, max_positions=max_length + 2, causal=True)
        return cls(Encoder(cfg).to(dtype), vocab, max_length)

    def _check(self, Y):
        if len(Y) > self.max_length:
            raise ValueError(f"target longer than max_length={self.max_length}")
        if self.vocab.mask_id in Y:
            raise MaskedTokenError("AR scoring needs a mask-free sequence")

    def factors(self, Y: Sequence, X: Sequence = ()) -> np.ndarray:
        """``log p(y_i | y_<i, X)`` for every target token followed by the end marker."""
        self._check(Y)
        batch = PairBatch([(X, Y)], self.vocab)
        with torch.no_grad():
            logits, _ = self.encoder(*batch.args())
        o = batch.offsets[0]
        lp = torch.log_softmax(logits[0].double(), dim=-1)
        targets = list(Y) + [self.vocab.eos_id]
        # logits at index p predict token p + 1; the first target follows <sep> at o - 1
        return np.array([lp[o - 1 + j, tok].item() for j, tok in enumerate(targets)])

    def log_prob(self, Y: Sequence, X: Sequence = ()) -> float:
        return float(self.factors(Y, X).sum())

    def sequential_log_prob(self, Y: Sequence, X: Sequence = ()) -> float:
        """Same quantity, one prefix at a time; used to cross-check the parallel pass."""
        self._check(Y)
        total = 0.0
        targets = list(Y) + [self.vocab.eos_id]
        for j, tok in enumerate(targets):
            toks = list(X) + [self.vocab.sep_id] + list(Y[:j])
            pos = list(range(len(X) + 1)) + list(range(j))
            seg = [0] * (len(X) + 1) + [1] * j
            t = torch.tensor([toks])
            with torch.no_grad():
                logits, _ = self.encoder(t, torch.tensor([pos]), torch.tensor([seg]), torch.zeros_like(t, dtype=torch.bool))
            total += torch.log_softmax(logits[0, -1].double(), dim=-1)[tok].item()
        return total

    def save(self, path):
        return save_checkpoint(path, "ar", asdict(self.encoder.cfg), self.vocab, self.encoder.state_dict(), {"max_length": self.max_length})

    @classmethod
    def load(cls, path):
        meta, vocab, state = load_checkpoint(path)
        if meta["kind"] != "ar":
            raise ValueError(f"{path} holds a {meta['kind']} checkpoint")
        enc = Encoder(EncoderConfig(**meta["config"])).to(next(iter(state.values())).dtype)
        enc.load_state_dict(state)
        return cls(enc, vocab, meta["extra"]["max_length"])


def ar_log_prob(model: ARModel, Y: Sequence, X: Sequence = ()) -> float:
    return model.log_prob(Y, X)


def train_ar(pairs, vocab: Vocabulary, cfg: TrainConfig = TrainConfig()) -> tuple[ARModel, list[float]]:
    pairs = [(tuple(s), tuple(t)) for s, t in pairs]
    if not pairs:
        raise ValueError("cannot train on an empty corpus")
    model = ARModel.init(vocab, cfg.max_length, cfg.d_model, cfg.n_layers, cfg.d_ff, seed=cfg.seed)
    corpus = PackedCorpus(pairs, vocab)
    rng = np.random.default_rng(cfg.seed)
    enc = model.encoder.train()
    opt = AdamConfig(cfg.lr, cfg.beta1, cfg.beta2).make(enc.parameters())
    losses = []
    for step in range(1, cfg.steps + 1):
        rows = torch.from_numpy(rng.integers(0, len(corpus), size=min(cfg.batch_size, len(corpus))))
        tokens, positions, segments, pad_mask, target, offsets, tgt_len = corpus.select(rows)
        logits, _ = enc(tokens, positions, segments, pad_mask)
        # predict every target token and the end marker from the preceding position
        S = tokens.shape[1]
        idx = torch.arange(S)[None, :]
        predicted = (idx >= offsets[:, None]) & (idx <= (offsets + tgt_len)[:, None])
        src_pos = predicted.roll(-1, dims=1)
        loss = F.cross_entropy(logits[src_pos], tokens[predicted])
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("ar step %d: loss %.4f", step, float(np.mean(losses[-cfg.log_every:])))
    model.encoder.eval()
    return model, losses

