"""Self-checks of the decoders against exact computations on tiny tabular models."""

from __future__ import annotations

import contextlib
import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .core import trace_score
from .decoding import DecodeConfig, beam, beam_search, brute_force_optimistic, generate, gibbs_sample, special_case_decode
from .models import TabularJointModel
from .selection import make_preset


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    seconds: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<24} measured={self.measured:.3g} tol={self.tolerance:.3g} ({self.seconds:.1f}s) {self.detail}".rstrip()


# ---------------------------------------------------------------------------
# independent oracles, computed from the joint table directly


def chain_rule_greedy(model: TabularJointModel, X=(), L: int = 3):
    """Left-to-right greedy decoding from prefix marginals of the table; returns (ids, log-prob)."""
    table = model.table(tuple(X), L)
    prefix: tuple[int, ...] = ()
    logp = 0.0
    for i in range(L):
        sub = table[prefix]
        marg = sub.reshape(sub.shape[0], -1).sum(axis=1)
        cond = marg / marg.sum()
        v = int(np.argmax(cond))  # first maximum: lowest token id
        logp += math.log(cond[v])
        prefix = prefix + (v,)
    return model.to_ids(prefix), logp


def gibbs_transition_matrix(model: TabularJointModel, X=(), L: int = 2):
    """Transition matrix of single-site Gibbs sampling with a uniformly chosen coordinate."""
    table = model.table(tuple(X), L)
    n = table.shape[0]
    states = list(itertools.product(range(n), repeat=L))
    index = {s: k for k, s in enumerate(states)}
    P = np.zeros((len(states), len(states)))
    for s in states:
        for i in range(L):
            idx = list(s)
            column = []
            for v in range(n):
                idx[i] = v
                column.append(table[tuple(idx)])
            column = np.array(column) / sum(column)
            for v in range(n):
                idx[i] = v
                P[index[s], index[tuple(idx)]] += column[v] / L
    return states, P


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    w, vecs = np.linalg.eig(P.T)
    k = int(np.argmin(np.abs(w - 1.0)))
    pi = np.real(vecs[:, k])
    return pi / pi.sum()


# ---------------------------------------------------------------------------
# checks


def check_ar_chain_rule(n: int = 50, seed: int = 0):
    """Worst absolute log-prob difference and number of output mismatches."""
    rng = np.random.default_rng(seed)
    worst, mismatches = 0.0, 0
    strategy = make_preset("left2right")
    for _ in range(n):
        m = TabularJointModel.random(rng, 3, 3)
        tr = generate(m, strategy, (), 3, DecodeConfig(T="L"))
        s = trace_score(tr)
        ids, logp = chain_rule_greedy(m, (), 3)
        ar = special_case_decode(m, (), 3, "ar")
        worst = max(worst, abs((s.total - s.length_term) - logp))
        mismatches += tr.final != ids or ar.final != tr.final
    return worst, mismatches


def check_special_cases(n: int = 100, seed: int = 1):
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(n):
        L = int(rng.integers(1, 4))
        m = TabularJointModel.random(rng, L, 3)
        ar = special_case_decode(m, (), L, "ar")
        k1 = special_case_decode(m, (), L, "semi_ar", k=1)
        kL = special_case_decode(m, (), L, "semi_ar", k=L)
        nar = special_case_decode(m, (), L, "nar_refine", T=1)
        mismatches += (ar.steps, ar.intermediates) != (k1.steps, k1.intermediates)
        mismatches += (kL.steps, kL.intermediates) != (nar.steps, nar.intermediates)
    return mismatches


def check_beam_vs_brute_force(n: int = 50, seed: int = 2):
    """Full-frontier beam against exhaustive search: (worst score gap, output mismatches)."""
    rng = np.random.default_rng(seed)
    cfg = DecodeConfig(T=3, beam_K=10**6, beam_Kp=3, beam_Kpp=3)
    strategy = make_preset("left2right")
    worst, mismatches = 0.0, 0
    for _ in range(n):
        m = TabularJointModel.random(rng, 3, 3)
        (tr, score), *_ = beam_search(m, strategy, (), 3, cfg)
        bf, bf_score = brute_force_optimistic(m, (), 3, 3)
        worst = max(worst, abs(score - bf_score))
        mismatches += tr.final != bf.final
    return worst, mismatches


def check_gibbs(n: int = 20, burn_in: int = 1000, steps: int = 50000, seed: int = 0):
    """Largest total-variation distance between empirical and stationary distributions."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        m = TabularJointModel.random(rng, 2, 2)
        states, P = gibbs_transition_matrix(m, (), 2)
        pi = stationary_distribution(P)
        chain = gibbs_sample(m, (), 2, burn_in + steps, rng=rng)[burn_in:]
        index = {m.to_ids(s): k for k, s in enumerate(states)}
        counts = np.bincount([index[y] for y in chain], minlength=len(states))
        tv = 0.5 * np.abs(counts / counts.sum() - pi).sum()
        worst = max(worst, tv)
    return worst


@contextlib.contextmanager
def mutations(names):
    saved = set(beam._MUTATIONS)
    beam._MUTATIONS.clear()
    beam._MUTATIONS.update(names or ())
    try:
        yield
    finally:
        beam._MUTATIONS.clear()
        beam._MUTATIONS.update(saved)


def run_oracle_suite(mutate=None, gibbs_models: int = 5) -> list[CheckResult]:
    """Run every tabular equivalence check; ``mutate`` names faults to inject first (e.g. ``beam-off-by-one``)."""
    results = []
    with mutations(mutate):
        t = time.perf_counter()
        worst, bad = check_ar_chain_rule()
        results.append(CheckResult("ar_chain_rule", worst <= 1e-12 and bad == 0, worst, 1e-12, time.perf_counter() - t, f"mismatches={bad}"))
        t = time.perf_counter()
        bad = check_special_cases()
        results.append(CheckResult("special_cases", bad == 0, bad, 0, time.perf_counter() - t))
        t = time.perf_counter()
        worst, bad = check_beam_vs_brute_force()
        results.append(CheckResult("beam_vs_brute_force", worst <= 1e-12 and bad == 0, worst, 1e-12, time.perf_counter() - t, f"mismatches={bad}"))
        t = time.perf_counter()
        tv = check_gibbs(n=gibbs_models)
        results.append(CheckResult("gibbs_stationarity", tv <= 0.02, tv, 0.02, time.perf_counter() - t))
    return results
