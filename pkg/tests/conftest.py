import pytest
import torch

from taggen.corpus import Sentence
from taggen.seq2seq import ModelConfig, Seq2SeqModel
from taggen.tokenizer import train_bpe

# filled by test_acceptance; printed once at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}

SMALL_TEXT = [
    "please send me the data",
    "send me the data",
    "could you please check the report",
    "check the report today",
    "thanks for the update",
    "kindly review the plan",
]


def sent(text):
    return Sentence(tuple(text.split()))


@pytest.fixture(scope="session")
def small_vocab():
    return train_bpe([sent(t) for t in SMALL_TEXT], vocab_size=120)


@pytest.fixture
def tiny_model(small_vocab):
    def make(dim=16, heads=2, layers=1, dtype="float32", seed=0, dropout=0.0, max_len=32):
        cfg = ModelConfig(vocab_size=len(small_vocab), layers=layers, heads=heads, dim=dim,
                          dropout=dropout, max_len=max_len, seed=seed, dtype=dtype,
                          vocab_fingerprint=small_vocab.fingerprint())
        return Seq2SeqModel(cfg)
    return make


@pytest.fixture(autouse=True)
def _quiet_torch():
    torch.set_num_threads(1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
