import numpy as np
import pytest
import torch

from seqgen.models import TrainConfig, train_masked_lm
from seqgen.tasks import SyntheticTask, encode_pairs, synth_corpus

torch.set_num_threads(1)

# filled by test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


class TinyTask:
    """A small cipher_copy corpus and a briefly trained masked model, shared by the unit tests."""

    def __init__(self):
        self.task = SyntheticTask("cipher_copy", vocab_size=8, min_len=3, max_len=6, seed=3)
        self.vocab = self.task.vocabulary()
        splits = synth_corpus(self.task, 400)
        self.train = encode_pairs(splits["train"], self.vocab)
        self.test = encode_pairs(splits["test"], self.vocab)
        cfg = TrainConfig(d_model=16, n_layers=1, d_ff=32, steps=150, batch_size=32, lr=3e-3, seed=0, max_length=6, log_every=0)
        self.model, self.losses = train_masked_lm(self.train, self.vocab, cfg)


@pytest.fixture(scope="session")
def tiny():
    return TinyTask()


@pytest.fixture(scope="session")
def acceptance_lines():
    return ACCEPTANCE_LINES


@pytest.fixture
def rng():
    return np.random.default_rng(0)
