"""Metrics and analyses: corpus BLEU, exact match, energies, energy-gap curves, generation-order vectors and clustering."""

from __future__ import annotations

import csv
import math
import warnings
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .core import GenerationTrace, Sequence
from .models.base import MaskedTokenError, pseudo_log_likelihood, with_masks

BLEU_EPS = 0.01
ORDER_DIM = 10


def _ngrams(seq: Sequence, n: int) -> Counter:
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def bleu_stats(candidates, references, max_n: int = 4):
    if len(candidates) != len(references):
        raise ValueError("candidate and reference lists differ in length")
    if not candidates:
        raise ValueError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for c, r in zip(candidates, references):
        c_len += len(c)
        r_len += len(r)
        for n in range(1, max_n + 1):
            cn, rn = _ngrams(c, n), _ngrams(r, n)
            matches[n - 1] += sum(min(k, rn[g]) for g, k in cn.items())
            totals[n - 1] += max(len(c) - n + 1, 0)
    return matches, totals, c_len, r_len


def bleu(candidates, references, max_n: int = 4, eps: float = BLEU_EPS) -> float:
    """Corpus BLEU-4 in [0, 100] with brevity penalty.

    A zero n-gram match count is replaced by ``eps``. An order with no
    candidate n-grams at all (every candidate shorter than n) has precision
    1, so identical corpora score 100. Zero unigram matches give 0.
    """
    matches, totals, c_len, r_len = bleu_stats(candidates, references, max_n)
    if matches[0] == 0 or c_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        log_p += math.log((m if m > 0 else eps) / t)
    bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    return 100.0 * bp * math.exp(log_p / max_n)


def exact_match(candidates, references) -> float:
    if len(candidates) != len(references):
        raise ValueError("candidate and reference lists differ in length")
    if not candidates:
        raise ValueError("empty corpus")
    return float(np.mean([tuple(c) == tuple(r) for c, r in zip(candidates, references)]))


# ---------------------------------------------------------------------------
# energies


def energy(model, Y: Sequence, X: Sequence = (), kind: str = "pseudo_ll") -> float:
    """Sequence energy: negative pseudo-log-likelihood, or with ``kind="logit"`` the negated
    sum of raw output scores of each symbol with its own position masked."""
    if kind == "pseudo_ll":
        return -pseudo_log_likelihood(model, Y, X)
    if kind == "logit":
        Y = tuple(Y)
        mask = model.vocab.mask_id
        if mask in Y:
            raise MaskedTokenError("energy of a sequence that still contains mask tokens")
        queries = [with_masks(Y, (i,), mask) for i in range(len(Y))]
        scores = model.raw_logits(queries, tuple(X))
        return -float(sum(s[i, Y[i]] for i, s in enumerate(scores)))
    raise ValueError(f"unknown energy kind {kind!r}")


def partial_energy(model, Y: Sequence, X: Sequence = ()) -> float:
    """Energy of the filled positions only, each scored with itself masked, divided by the filled count.

    Positions that are still masked stay masked in every query and carry
    no energy. A fully masked sequence has energy 0.
    """
    mask = model.vocab.mask_id
    filled = [i for i, y in enumerate(Y) if y != mask]
    if not filled:
        return 0.0
    rows = model.conditional_batch([(Y, (i,)) for i in filled], tuple(X))
    total = 0.0
    for i, r in zip(filled, rows):
        total -= math.log(max(r[0, Y[i]], 1e-300))
    return total / len(filled)


def energy_curve(model, trace: GenerationTrace) -> np.ndarray:
    """Partial energy of every intermediate Y^1 .. Y^{T+1}."""
    return np.array([partial_energy(model, Y, trace.input) for Y in trace.intermediates])


def resample_curve(curve: np.ndarray, n_points: int = 11) -> np.ndarray:
    """Values at evenly spaced step fractions 0..1, taking the nearest recorded step."""
    T = len(curve) - 1
    fractions = np.linspace(0.0, 1.0, n_points)
    idx = [int(math.floor(f * T + 0.5)) for f in fractions]
    return curve[idx]


@dataclass
class GapCurve:
    strategy: str
    fractions: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray


def energy_gap_curves(traces_by_strategy: dict[str, list[GenerationTrace]], model, baseline: str = "uniform", n_points: int = 11) -> dict[str, GapCurve]:
    """Per strategy, the mean over inputs of (baseline energy - strategy energy) along normalised steps.

    Traces are paired by index, so every strategy must have decoded the same
    inputs at the same lengths.
    """
    if baseline not in traces_by_strategy:
        raise ValueError(f"baseline {baseline!r} missing from the traces")
    base = traces_by_strategy[baseline]
    cache: dict[int, np.ndarray] = {}

    def curve(tr):
        key = id(tr)
        if key not in cache:
            cache[key] = resample_curve(energy_curve(model, tr), n_points)
        return cache[key]

    out = {}
    fractions = np.linspace(0.0, 1.0, n_points)
    for name, traces in traces_by_strategy.items():
        if len(traces) != len(base):
            raise ValueError(f"{name}: {len(traces)} traces but the baseline has {len(base)}")
        gaps = []
        for b, s in zip(base, traces):
            if b.input != s.input or b.length != s.length:
                raise ValueError(f"{name}: traces are not paired with the baseline")
            gaps.append(curve(b) - curve(s))
        gaps = np.array(gaps)
        n = len(gaps)
        stderr = gaps.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(n_points)
        out[name] = GapCurve(name, fractions, gaps.mean(axis=0), stderr)
    return out


def write_gap_csv(curves: dict[str, GapCurve], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step_fraction", "strategy", "mean", "stderr"])
        for name, c in curves.items():
            for f, m, s in zip(c.fractions, c.mean, c.stderr):
                w.writerow([f"{f:.4f}", name, repr(float(m)), repr(float(s))])


# ---------------------------------------------------------------------------
# generation orders


def order_vector(trace: GenerationTrace, dim: int = ORDER_DIM) -> np.ndarray:
    """Entry j is the 1-based position chosen at step ceil(j T / dim), divided by L."""
    picks = []
    for t, step in enumerate(trace.steps, start=1):
        pos = step.positions
        if len(pos) != 1:
            raise ValueError(f"step {t} replaces {len(pos)} positions; order vectors need one per step")
        picks.append(pos[0])
    T, L = len(picks), trace.length
    if T == 0:
        raise ValueError("trace has no steps")
    return np.array([(picks[math.ceil(j * T / dim) - 1] + 1) / L for j in range(1, dim + 1)])


@dataclass
class ClusterReport:
    centers: np.ndarray  # (k, dim)
    counts: np.ndarray  # (k,)
    assignments: np.ndarray  # (n,)
    inertia: float


def kmeans_cluster(vectors, k: int = 5, seed: int = 0, n_init: int = 10) -> ClusterReport:
    """Lloyd's algorithm with k-means++ seeding and ``n_init`` restarts, keeping the lowest inertia."""
    from sklearn.cluster import KMeans
    from sklearn.exceptions import ConvergenceWarning

    V = np.asarray(vectors, dtype=float)
    if len(V) < k:
        raise ValueError(f"need at least {k} vectors, got {len(V)}")
    with warnings.catch_warnings():
        # duplicate points can leave fewer distinct clusters than k
        warnings.simplefilter("ignore", ConvergenceWarning)
        km = KMeans(n_clusters=k, init="k-means++", n_init=n_init, random_state=seed).fit(V)
    labels = km.labels_.astype(int)
    counts = np.bincount(labels, minlength=k)
    return ClusterReport(km.cluster_centers_, counts, labels, float(km.inertia_))


def write_cluster_csv(report: ClusterReport, path):
    dim = report.centers.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cluster", "size"] + [f"c{j}" for j in range(1, dim + 1)])
        for c, (center, size) in enumerate(zip(report.centers, report.counts)):
            w.writerow([c, int(size)] + [repr(float(x)) for x in center])


__all__ = [
    "ClusterReport",
    "GapCurve",
    "bleu",
    "bleu_stats",
    "energy",
    "energy_curve",
    "energy_gap_curves",
    "exact_match",
    "kmeans_cluster",
    "order_vector",
    "partial_energy",
    "resample_curve",
    "write_cluster_csv",
    "write_gap_csv",
]
