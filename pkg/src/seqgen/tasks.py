"""Synthetic translation tasks and the tab-separated corpus format.

Corpus files hold one pair per line, ``source<TAB>target``, tokens separated
by single spaces.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Vocabulary

KINDS = ("cipher_copy", "cipher_reverse", "local_swap")
SPLITS = (("train", 0.90), ("valid", 0.05), ("test", 0.05))


@dataclass(frozen=True)
class SyntheticTask:
    kind: str = "cipher_reverse"
    vocab_size: int = 32
    min_len: int = 5
    max_len: int = 20
    seed: int = 0
    identity_cipher: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {KINDS}")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")

    @property
    def symbols(self) -> list[str]:
        width = len(str(self.vocab_size - 1))
        return [f"w{i:0{width}d}" for i in range(self.vocab_size)]

    def vocabulary(self) -> Vocabulary:
        return Vocabulary.build(self.symbols)

    def cipher(self) -> dict[str, str]:
        syms = self.symbols
        if self.identity_cipher:
            return dict(zip(syms, syms))
        perm = np.random.default_rng(self.seed).permutation(len(syms))
        return {s: syms[int(j)] for s, j in zip(syms, perm)}

    def translate(self, source: list[str]) -> list[str]:
        sigma = self.cipher()
        out = [sigma[s] for s in source]
        if self.kind == "cipher_reverse":
            out = out[::-1]
        elif self.kind == "local_swap":
            for i in range(0, len(out) - 1, 2):
                out[i], out[i + 1] = out[i + 1], out[i]
        return out


def synth_corpus(task: SyntheticTask, n: int, out_dir=None) -> dict[str, list[tuple[list[str], list[str]]]]:
    """Sample ``n`` distinct sources, translate them, split 90/5/5 and optionally write the files."""
    if n < 100:
        raise ValueError("need at least 100 pairs for a train/valid/test split")
    rng = np.random.default_rng(task.seed + 1)
    syms = task.symbols
    seen = set()
    sources = []
    attempts = 0
    while len(sources) < n:
        attempts += 1
        if attempts > 50 * n:
            raise ValueError("task space too small for the requested corpus size")
        L = int(rng.integers(task.min_len, task.max_len + 1))
        src = tuple(syms[int(i)] for i in rng.integers(0, len(syms), size=L))
        if src in seen:
            continue
        seen.add(src)
        sources.append(list(src))
    pairs = [(s, task.translate(s)) for s in sources]
    splits = {}
    start = 0
    for k, (name, frac) in enumerate(SPLITS):
        end = n if k == len(SPLITS) - 1 else start + int(round(frac * n))
        splits[name] = pairs[start:end]
        start = end
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, rows in splits.items():
            write_corpus(out / f"{name}.tsv", rows)
        (out / "vocab.txt").write_text("\n".join(task.vocabulary().tokens) + "\n")
    return splits


def write_corpus(path, pairs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for src, tgt in pairs:
            fh.write(" ".join(src) + "\t" + " ".join(tgt) + "\n")


def read_corpus(path) -> list[tuple[list[str], list[str]]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                src, tgt = line.split("\t")
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected exactly one tab") from None
            pairs.append((src.split(" "), tgt.split(" ")))
    return pairs


def read_vocab(path) -> Vocabulary:
    tokens = [t for t in Path(path).read_text(encoding="utf-8").splitlines() if t]
    specials = {"<pad>": "pad_id", "<mask>": "mask_id", "<sep>": "sep_id", "<eos>": "eos_id"}
    ids = {attr: tokens.index(tok) for tok, attr in specials.items() if tok in tokens}
    return Vocabulary(tuple(tokens), **ids)


def encode_pairs(pairs, vocab: Vocabulary):
    return [(vocab.encode(s), vocab.encode(t)) for s, t in pairs]
