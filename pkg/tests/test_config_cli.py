import csv
import json
import subprocess
import sys

import pytest

from seqgen import cli
from seqgen.config import RunConfig, resolve_path, write_resolved
from seqgen.oracle_suite import run_oracle_suite
from seqgen.tasks import SyntheticTask, read_corpus, read_vocab, synth_corpus

SMALL = [
    "--vocab-size", "8", "--min-len", "3", "--max-len", "6", "--n-pairs", "300",
    "--d-model", "16", "--n-layers", "1", "--d-ff", "32", "--train-steps", "40", "--batch-size", "16",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Output root with a synthesized corpus, a masked model, an AR model and a policy."""
    root = tmp_path_factory.mktemp("cli")
    mp = pytest.MonkeyPatch()
    mp.setenv("SEQGEN_OUTPUT_ROOT", str(root))
    for cmd in ("synth-data", "train-lm", "train-ar"):
        assert cli.main([cmd] + SMALL) == 0
    assert cli.main(["train-policy"] + SMALL + ["--ppo-iterations", "2", "--ppo-generation-batch", "4", "--ppo-update-batch", "16", "--ppo-history-k", "2"]) == 0
    yield root
    mp.undo()


def run(args, workspace, monkeypatch):
    monkeypatch.setenv("SEQGEN_OUTPUT_ROOT", str(workspace))
    return cli.main(args + SMALL)


def read_metrics(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestRunConfig:
    def test_parse_and_coerce(self):
        cfg = RunConfig.parse("beam_K = 4  # wide\n\nlength_term=false\nlr=0.01\nstrategy=preset:left2right\n")
        assert cfg.beam_K == 4 and cfg.length_term is False and cfg.lr == 0.01
        assert cfg.strategy == "preset:left2right"

    def test_unknown_key_rejected(self):
        with pytest.raises(KeyError):
            RunConfig.parse("beam_width=4")
        with pytest.raises(KeyError):
            RunConfig().with_overrides({"nope": 1})

    def test_malformed_line(self):
        with pytest.raises(ValueError):
            RunConfig.parse("just words")
        with pytest.raises(ValueError):
            RunConfig.parse("length_term=maybe")

    def test_text_round_trip(self):
        cfg = RunConfig().with_overrides({"beam_K": "3", "ppo_gae": "true", "T": "2L"})
        assert RunConfig.parse(cfg.to_text()) == cfg

    def test_views(self):
        cfg = RunConfig().with_overrides({"T": "3", "beam_Kpp": "2", "ppo_gamma": "0.5", "train_steps": "7"})
        assert cfg.decode_config().T == 3 and cfg.decode_config().beam_Kpp == 2
        assert cfg.ppo_config().gamma == 0.5
        assert cfg.train_config().steps == 7
        assert cfg.synthetic_task().kind == "cipher_reverse"

    def test_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SEQGEN_OUTPUT_ROOT", str(tmp_path))
        assert resolve_path("runs/a") == tmp_path / "runs/a"
        assert resolve_path("/abs/path") == resolve_path("/abs/path")
        path = write_resolved(RunConfig(), tmp_path / "out")
        assert RunConfig.from_file(path) == RunConfig()


class TestSyntheticTask:
    def test_identity_copy(self):
        t = SyntheticTask("cipher_copy", identity_cipher=True)
        assert t.translate(["w01", "w05"]) == ["w01", "w05"]

    def test_identity_reverse(self):
        t = SyntheticTask("cipher_reverse", identity_cipher=True)
        assert t.translate(["w01", "w02", "w03"]) == ["w03", "w02", "w01"]

    def test_local_swap(self):
        t = SyntheticTask("local_swap", identity_cipher=True)
        assert t.translate(["w01", "w02", "w03"]) == ["w02", "w01", "w03"]

    def test_cipher_is_permutation(self):
        t = SyntheticTask(seed=4)
        assert sorted(t.cipher().values()) == t.symbols

    def test_byte_identical_files(self, tmp_path):
        t = SyntheticTask(vocab_size=10, min_len=2, max_len=5)
        synth_corpus(t, 200, tmp_path / "a")
        synth_corpus(t, 200, tmp_path / "b")
        for name in ("train.tsv", "valid.tsv", "test.tsv", "vocab.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_splits_disjoint(self, tmp_path):
        splits = synth_corpus(SyntheticTask(vocab_size=10), 200, tmp_path)
        assert [len(splits[k]) for k in ("train", "valid", "test")] == [180, 10, 10]
        sources = [tuple(s) for rows in splits.values() for s, _ in rows]
        assert len(set(sources)) == 200
        assert read_corpus(tmp_path / "test.tsv") == splits["test"]
        assert read_vocab(tmp_path / "vocab.txt") == SyntheticTask(vocab_size=10).vocabulary()

    def test_too_small(self):
        with pytest.raises(ValueError):
            synth_corpus(SyntheticTask(), 50)

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            SyntheticTask("shuffle")


class TestCli:
    def test_artifacts_written(self, workspace):
        for name in ("data/train.tsv", "data/vocab.txt", "models/masked_lm.npz", "models/masked_lm.loss.csv", "models/ar.npz", "models/policy.npz", "models/policy.log.csv", "models/resolved_config.txt"):
            assert (workspace / name).exists(), name

    def test_decode_linear_time_traces(self, workspace, monkeypatch):
        assert run(["decode", "--strategy", "preset:left2right", "--output-dir", "runs/l2r", "--split", "valid"], workspace, monkeypatch) == 0
        out = workspace / "runs/l2r"
        records = [json.loads(line) for line in (out / "report.jsonl").read_text().splitlines()]
        assert len(records) == 15
        assert set(records[0]) == {"source", "chosen", "chosen_length", "rescorer_scores", "strategy", "wall_time_ms"}
        headers = [json.loads(line) for line in (out / "traces.jsonl").read_text().splitlines() if '"L"' in line]
        steps = [json.loads(line) for line in (out / "traces.jsonl").read_text().splitlines() if '"L"' not in line]
        assert len(steps) == sum(h["L"] for h in headers)
        assert all(len(s["positions"]) == 1 for s in steps)
        assert (out / "resolved_config.txt").exists()

    def test_metrics_rows_byte_identical(self, workspace, monkeypatch):
        args = ["decode", "--strategy", "preset:uniform", "--record-wall-time", "false", "--limit", "6"]
        for d in ("runs/r1", "runs/r2"):
            assert run(args + ["--output-dir", d], workspace, monkeypatch) == 0
        a = (workspace / "runs/r1/metrics.csv").read_bytes()
        assert a == (workspace / "runs/r2/metrics.csv").read_bytes()
        row = read_metrics(workspace / "runs/r1/metrics.csv")[0]
        assert list(row) == cli.METRIC_FIELDS and row["wall_time"] == ""

    def test_worker_pool_matches_serial(self, workspace, monkeypatch):
        base = ["decode", "--strategy", "preset:uniform", "--record-wall-time", "false", "--limit", "8"]
        assert run(base + ["--output-dir", "runs/w1"], workspace, monkeypatch) == 0
        assert run(base + ["--output-dir", "runs/w3", "--workers", "3"], workspace, monkeypatch) == 0
        assert (workspace / "runs/w1/traces.jsonl").read_bytes() == (workspace / "runs/w3/traces.jsonl").read_bytes()

    @pytest.mark.parametrize(
        "extra",
        [
            ["--strategy", "preset:easy_first", "--beam-K", "2", "--beam-Kpp", "2"],
            ["--strategy", "preset:least2most", "--schedule", "constant_anneal", "--T", "L/2"],
            ["--strategy", "preset:easy_first", "--n-length-candidates", "2"],
            ["--strategy", "preset:left2right", "--n-length-candidates", "2", "--rescoring", "ar_model"],
            ["--strategy", "special:semi_ar:2"],
            ["--strategy", "special:nar_refine:2"],
            ["--strategy", "policy:models/policy.npz"],
            ["--strategy", "loglinear:a_ne=1,a_lp=0.9,a_pos=0,tau=1", "--energy-kind", "logit"],
        ],
    )
    def test_decode_variants(self, workspace, monkeypatch, extra):
        assert run(["decode", "--limit", "4", "--output-dir", "runs/variant"] + extra, workspace, monkeypatch) == 0

    def test_policy_absolute_path(self, workspace, monkeypatch):
        path = workspace / "models/policy.npz"
        assert run(["decode", "--limit", "2", "--output-dir", "runs/pol", "--strategy", f"policy:{path}"], workspace, monkeypatch) == 0

    def test_evaluate(self, workspace, monkeypatch):
        assert run(["decode", "--strategy", "preset:left2right", "--output-dir", "runs/ev", "--limit", "5"], workspace, monkeypatch) == 0
        assert run(["evaluate", "--output-dir", "runs/ev"], workspace, monkeypatch) == 0
        result = json.loads((workspace / "runs/ev/evaluation.json").read_text())
        row = read_metrics(workspace / "runs/ev/metrics.csv")[-1]
        assert result["n"] == 5
        assert f"{result['BLEU']:.4f}" == row["BLEU"]

    def test_analyses(self, workspace, monkeypatch):
        for name in ("uniform", "easy_first"):
            assert run(["decode", "--strategy", f"preset:{name}", "--output-dir", f"runs/an_{name}", "--split", "valid"], workspace, monkeypatch) == 0
        assert run(["analyze-orders", "--output-dir", "runs/an_easy_first"], workspace, monkeypatch) == 0
        with open(workspace / "runs/an_easy_first/clusters.csv") as fh:
            sizes = [int(r["size"]) for r in csv.DictReader(fh)]
        assert sum(sizes) == 15
        traces = [f"uniform=runs/an_uniform/traces.jsonl", f"easy_first=runs/an_easy_first/traces.jsonl"]
        assert run(["analyze-energy", "--output-dir", "runs/energy", "--traces"] + traces, workspace, monkeypatch) == 0
        assert (workspace / "runs/energy/energy_curves.csv").exists()
        assert (workspace / "runs/energy/final_energy.csv").exists()

    def test_unpaired_energy_traces(self, workspace, monkeypatch):
        assert run(["decode", "--strategy", "preset:uniform", "--output-dir", "runs/short", "--limit", "3"], workspace, monkeypatch) == 0
        assert run(["decode", "--strategy", "preset:uniform", "--output-dir", "runs/long", "--limit", "4"], workspace, monkeypatch) == 0
        traces = ["uniform=runs/short/traces.jsonl", "x=runs/long/traces.jsonl"]
        assert run(["analyze-energy", "--output-dir", "runs/e2", "--traces"] + traces, workspace, monkeypatch) == 2

    def test_config_file_and_flag_override(self, workspace, monkeypatch, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("strategy=preset:least2most\nlimit=3\noutput_dir=runs/fromfile\nrecord_wall_time=false\n")
        assert run(["decode", "--config", str(conf), "--limit", "2"], workspace, monkeypatch) == 0
        row = read_metrics(workspace / "runs/fromfile/metrics.csv")[-1]
        assert row["strategy"] == "preset:least2most"
        assert len((workspace / "runs/fromfile/report.jsonl").read_text().splitlines()) == 2
        resolved = RunConfig.from_file(workspace / "runs/fromfile/resolved_config.txt")
        assert resolved.limit == 2

    def test_missing_checkpoint(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SEQGEN_OUTPUT_ROOT", str(tmp_path))
        assert cli.main(["decode"]) == 2

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as e:
            cli.main(["decode", "--beam-width", "4"])
        assert e.value.code == 2


class TestOracleCheck:
    def test_fresh_build_passes(self, capsys):
        assert cli.main(["oracle-check"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 4

    def test_mutation_detected(self):
        results = {r.name: r for r in run_oracle_suite(mutate={"beam-off-by-one"}, gibbs_models=1)}
        assert not results["beam_vs_brute_force"].passed
        assert results["ar_chain_rule"].passed and results["special_cases"].passed

    def test_mutation_exit_code(self):
        proc = subprocess.run([sys.executable, "-m", "seqgen", "oracle-check", "--mutate", "beam-off-by-one"], capture_output=True, text=True, timeout=300)
        assert proc.returncode == 1
        assert "FAIL  beam_vs_brute_force" in proc.stdout
