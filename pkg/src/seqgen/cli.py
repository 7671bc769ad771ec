"""Command-line harness: data synthesis, training, batch decoding, evaluation, analyses and oracle checks.

Every subcommand accepts ``--config FILE`` plus one flag per config key
(``--beam-K 4``); flags override the file. Relative paths resolve under
``$SEQGEN_OUTPUT_ROOT`` (default: the working directory).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, resolve_path, write_resolved
from .decoding import decode_with_length_candidates, special_case_decode
from .evaluation import bleu, energy, energy_gap_curves, exact_match, kmeans_cluster, order_vector, write_cluster_csv, write_gap_csv
from .models import ARModel, ToyMaskedLM, train_ar, train_masked_lm
from .oracle_suite import run_oracle_suite
from .rl import PolicyStrategy, PpoConfig, train_policy
from .selection import parse_strategy
from .tasks import encode_pairs, read_corpus, read_vocab, synth_corpus
from .traceio import read_traces, write_traces

log = logging.getLogger("seqgen")

METRIC_FIELDS = ["strategy", "b", "T", "schedule", "BLEU", "exact_match", "mean_energy", "wall_time"]


class CheckFailed(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# helpers


def load_split(cfg: RunConfig, split: str | None = None):
    data = resolve_path(cfg.data_dir)
    vocab = read_vocab(data / "vocab.txt")
    pairs = encode_pairs(read_corpus(data / f"{split or cfg.split}.tsv"), vocab)
    return vocab, pairs


def load_masked_model(cfg: RunConfig) -> ToyMaskedLM:
    path = resolve_path(cfg.model)
    if not path.exists():
        raise FileNotFoundError(f"masked model checkpoint {path} not found (run train-lm first)")
    return ToyMaskedLM.load(path)


def limited(pairs, limit: int):
    return pairs[:limit] if limit and limit > 0 else pairs


def append_csv_row(path: Path, fields, row: dict):
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        if new:
            w.writeheader()
        w.writerow(row)


# ---------------------------------------------------------------------------
# subcommands


def run_synth(cfg: RunConfig) -> dict:
    out = resolve_path(cfg.data_dir)
    splits = synth_corpus(cfg.synthetic_task(), cfg.n_pairs, out)
    write_resolved(cfg, out)
    return {name: len(rows) for name, rows in splits.items()}


def _write_losses(path: Path, losses):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for k, v in enumerate(losses, 1):
            w.writerow([k, repr(float(v))])


def run_train_lm(cfg: RunConfig) -> Path:
    vocab, pairs = load_split(cfg, "train")
    model, losses = train_masked_lm(pairs, vocab, cfg.train_config())
    path = resolve_path(cfg.model)
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
    _write_losses(path.with_suffix(".loss.csv"), losses)
    write_resolved(cfg, path.parent)
    return path


def run_train_ar(cfg: RunConfig) -> Path:
    vocab, pairs = load_split(cfg, "train")
    model, losses = train_ar(pairs, vocab, cfg.train_config())
    path = resolve_path(cfg.ar_model)
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path)
    _write_losses(path.with_suffix(".loss.csv"), losses)
    write_resolved(cfg, path.parent)
    return path


def run_train_policy(cfg: RunConfig) -> Path:
    model = load_masked_model(cfg)
    _, pairs = load_split(cfg, "train")
    ppo: PpoConfig = cfg.ppo_config()
    policy, _, train_log = train_policy(model, pairs, ppo)
    path = resolve_path(cfg.policy)
    path.parent.mkdir(parents=True, exist_ok=True)
    PolicyStrategy(policy, model).save(path, ppo)
    train_log.write_csv(path.with_suffix(".log.csv"))
    write_resolved(cfg, path.parent)
    return path


@dataclass
class DecodedSentence:
    record: dict
    trace: object
    chosen: tuple


def _make_decoder(cfg: RunConfig, model):
    """Returns (strategy, name, per-sentence decoder factory or None)."""
    spec = cfg.strategy
    if spec.startswith("special:"):
        parts = spec.split(":")
        mode = parts[1]
        arg = int(parts[2]) if len(parts) > 2 else None
        k = arg if mode == "semi_ar" else None
        T = arg if mode == "nar_refine" else None

        def factory(X):
            return lambda L, lp: special_case_decode(model, X, L, mode, k=k, T=T, length_log_prob=lp)

        return None, spec, factory
    if spec.startswith("policy:"):
        spec = "policy:" + str(resolve_path(spec.split(":", 1)[1]))
    strategy = parse_strategy(spec, masked_model=model)
    return strategy, cfg.strategy, None


def decode_pairs(cfg: RunConfig, model, pairs, ar_model=None) -> list[DecodedSentence]:
    dcfg = cfg.decode_config()
    strategy, name, factory = _make_decoder(cfg, model)
    vocab = model.vocab

    def one(item):
        idx, (X, _) = item
        rng = np.random.default_rng([cfg.seed, idx])
        start = time.perf_counter()
        decoder = factory(X) if factory else None
        res = decode_with_length_candidates(model, model.length_model, X, strategy, dcfg, ar_model, rng, decoder=decoder)
        wall = (time.perf_counter() - start) * 1000.0
        record = {
            "source": vocab.decode(X),
            "chosen": vocab.decode(res.chosen),
            "chosen_length": res.chosen_length,
            "rescorer_scores": {str(c.length): c.score for c in res.candidates},
            "strategy": name,
            "wall_time_ms": round(wall, 3),
        }
        return DecodedSentence(record, res.chosen_trace, res.chosen)

    items = list(enumerate(pairs))
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(one, items))
    return [one(it) for it in items]


def run_decode(cfg: RunConfig) -> dict:
    model = load_masked_model(cfg)
    _, pairs = load_split(cfg)
    pairs = limited(pairs, cfg.limit)
    ar_model = None
    if cfg.rescoring == "ar_model":
        ar_path = resolve_path(cfg.ar_model)
        if not ar_path.exists():
            raise FileNotFoundError(f"AR checkpoint {ar_path} not found (run train-ar first)")
        ar_model = ARModel.load(ar_path)
    out = resolve_path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    start = time.perf_counter()
    decoded = decode_pairs(cfg, model, pairs, ar_model)
    wall = time.perf_counter() - start
    with open(out / "report.jsonl", "w") as fh:
        for d in decoded:
            fh.write(json.dumps(d.record) + "\n")
    with open(out / "traces.jsonl", "w") as fh:
        write_traces([d.trace for d in decoded], fh)
    cands = [d.chosen for d in decoded]
    refs = [Y for _, Y in pairs]
    row = {
        "strategy": cfg.strategy,
        "b": cfg.beam_K,
        "T": cfg.T,
        "schedule": cfg.schedule,
        "BLEU": f"{bleu(cands, refs):.4f}",
        "exact_match": f"{exact_match(cands, refs):.4f}",
        "mean_energy": f"{np.mean([energy(model, Y, X, cfg.energy_kind) for Y, (X, _) in zip(cands, pairs)]):.6f}",
        "wall_time": f"{wall:.3f}" if cfg.record_wall_time else "",
    }
    append_csv_row(out / "metrics.csv", METRIC_FIELDS, row)
    return row


def run_evaluate(cfg: RunConfig) -> dict:
    out = resolve_path(cfg.output_dir)
    report = out / "report.jsonl"
    if not report.exists():
        raise FileNotFoundError(f"{report} not found (run decode first)")
    vocab, pairs = load_split(cfg)
    records = [json.loads(line) for line in report.read_text().splitlines() if line.strip()]
    refs = {tuple(vocab.decode(X)): Y for X, Y in pairs}
    cands, gold = [], []
    for r in records:
        key = tuple(r["source"])
        if key not in refs:
            raise ValueError(f"source {' '.join(key)} is not in the {cfg.split} split")
        cands.append(vocab.encode(r["chosen"]))
        gold.append(refs[key])
    result = {"n": len(cands), "BLEU": bleu(cands, gold), "exact_match": exact_match(cands, gold)}
    (out / "evaluation.json").write_text(json.dumps(result, indent=2) + "\n")
    return result


def _trace_files(paths, default: Path):
    return [Path(p) for p in paths] if paths else [default]


def run_analyze_orders(cfg: RunConfig, traces=None) -> dict:
    out = resolve_path(cfg.output_dir)
    vocab = read_vocab(resolve_path(cfg.data_dir) / "vocab.txt")
    vectors = []
    for path in _trace_files(traces, out / "traces.jsonl"):
        with open(resolve_path(str(path))) as fh:
            for tr in read_traces(fh, vocab):
                vectors.append(order_vector(tr))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "order_vectors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"o{j}" for j in range(1, 11)])
        for v in vectors:
            w.writerow([repr(float(x)) for x in v])
    report = kmeans_cluster(vectors, k=cfg.clusters, seed=cfg.seed)
    write_cluster_csv(report, out / "clusters.csv")
    write_resolved(cfg, out)
    return {"n": len(vectors), "sizes": report.counts.tolist(), "inertia": report.inertia}


def run_analyze_energy(cfg: RunConfig, traces, baseline: str = "uniform") -> dict:
    model = load_masked_model(cfg)
    by_strategy = {}
    for item in traces:
        name, sep, path = item.partition("=")
        if not sep:
            raise ValueError(f"expected name=path, got {item!r}")
        with open(resolve_path(path)) as fh:
            by_strategy[name] = read_traces(fh, model.vocab)
    curves = energy_gap_curves(by_strategy, model, baseline)
    out = resolve_path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_gap_csv(curves, out / "energy_curves.csv")
    finals = {name: float(np.mean([energy(model, tr.final, tr.input, cfg.energy_kind) for tr in trs])) for name, trs in by_strategy.items()}
    with open(out / "final_energy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "mean_energy"])
        for name, e in finals.items():
            w.writerow([name, repr(e)])
    write_resolved(cfg, out)
    return finals


def run_oracle_check(mutate=None) -> list:
    return run_oracle_suite(mutate=set(mutate or ()))


# ---------------------------------------------------------------------------
# argument parsing


COMMANDS = ("synth-data", "train-lm", "train-ar", "train-policy", "decode", "evaluate", "analyze-orders", "analyze-energy", "oracle-check")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value run configuration file")
    common.add_argument("-v", "--verbose", action="store_true")
    keys = common.add_argument_group("config keys (override the file)")
    for key in RunConfig.keys():
        keys.add_argument(f"--{key.replace('_', '-')}", dest=f"key_{key}", metavar="VALUE")
    parser = argparse.ArgumentParser(prog="seqgen", description="Generalized sequence generation harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "analyze-orders":
            p.add_argument("--traces", nargs="*", help="trace files (default: <output_dir>/traces.jsonl)")
        if name == "analyze-energy":
            p.add_argument("--traces", nargs="+", required=True, help="name=path trace files, one per strategy")
            p.add_argument("--baseline", default="uniform")
        if name == "oracle-check":
            p.add_argument("--mutate", nargs="*", default=[], help="inject named faults (e.g. beam-off-by-one)")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("key_") and v is not None}
    return cfg.with_overrides(overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        cfg = resolve_config(args)
        cmd = args.command
        if cmd == "synth-data":
            sizes = run_synth(cfg)
            print(" ".join(f"{k}={v}" for k, v in sizes.items()))
        elif cmd == "train-lm":
            print(run_train_lm(cfg))
        elif cmd == "train-ar":
            print(run_train_ar(cfg))
        elif cmd == "train-policy":
            print(run_train_policy(cfg))
        elif cmd == "decode":
            row = run_decode(cfg)
            print(",".join(f"{k}={row[k]}" for k in METRIC_FIELDS))
        elif cmd == "evaluate":
            print(json.dumps(run_evaluate(cfg)))
        elif cmd == "analyze-orders":
            print(json.dumps(run_analyze_orders(cfg, args.traces)))
        elif cmd == "analyze-energy":
            print(json.dumps(run_analyze_energy(cfg, args.traces, args.baseline)))
        elif cmd == "oracle-check":
            results = run_oracle_check(args.mutate)
            for r in results:
                print(r.line())
            if not all(r.passed for r in results):
                raise CheckFailed("oracle checks failed")
    except CheckFailed as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
