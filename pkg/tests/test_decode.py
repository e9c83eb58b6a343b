import json

import pytest
import torch

from oracles import candidate_sequences
from taggen.decode import (Hypothesis, beam_search, default_max_len, greedy_decode, read_transfers_jsonl,
                           rerank_tagged, step_log_probs, transfer, transfer_jsonl)
from taggen.seq2seq import ModelConfig, Seq2SeqModel, TrainConfig, train
from taggen.tagdata import ParallelPair
from taggen.corpus import Sentence
from taggen.tokenizer import BOS_ID, EOS_ID, encode, train_bpe


def random_model(seed, vocab_size=4, sharpen=3.0):
    cfg = ModelConfig(vocab_size=vocab_size, layers=1, heads=2, dim=8, dropout=0.0, max_len=8,
                      seed=seed, dtype="float64")
    m = Seq2SeqModel(cfg)
    with torch.no_grad():
        m.output.weight.mul_(sharpen)
    return m.eval()


@torch.no_grad()
def sequence_logprob(model, src, ys):
    """Teacher-forced log-probability of every sequence in one full forward pass each."""
    s = torch.tensor([list(src) + [EOS_ID]])
    out = []
    for y in ys:
        tgt_in = torch.tensor([[BOS_ID, *y[:-1]]])
        logp = torch.log_softmax(model(s, tgt_in)[0].to(torch.float64), -1)
        out.append(float(sum(logp[t, tok] for t, tok in enumerate(y))))
    return out


def exhaustive_best(model, src, max_len):
    V = model.config.vocab_size
    cands = candidate_sequences(V, max_len, EOS_ID)
    scores = sequence_logprob(model, src, cands)
    best = max(range(len(cands)), key=lambda i: scores[i])
    return cands[best], scores[best]


def test_candidate_count():
    assert len(candidate_sequences(4, 3, EOS_ID)) == 1 + 3 + 9 + 27


@pytest.mark.parametrize("seed", range(10))
def test_beam_matches_exhaustive(seed):
    m = random_model(seed)
    src = [3, 0, 3][: 1 + seed % 3]
    hyps = beam_search(m, src, beam=64, max_len=3, banned=())
    ids, score = exhaustive_best(m, src, 3)
    assert hyps[0].ids == ids
    assert hyps[0].logprob == pytest.approx(score, abs=1e-9)


def test_hypothesis_logprob_is_sum_of_steps():
    m = random_model(1, vocab_size=6)
    for h in beam_search(m, [4, 5], beam=4, max_len=4):
        assert h.logprob == pytest.approx(sequence_logprob(m, [4, 5], [h.ids])[0], abs=1e-9)
        assert h.finished == (h.ids[-1] == EOS_ID)
        assert EOS_ID not in h.ids[:-1]


def test_beam_one_is_greedy():
    m = random_model(2, vocab_size=7)
    src = [4, 5, 6]
    memory, mask = m.encode(torch.tensor([src + [EOS_ID]]))
    prefix = []
    for _ in range(default_max_len(len(src))):
        logp = step_log_probs(m, memory, mask, [prefix])[0]
        logp[[0, 1]] = -float("inf")
        tok = int(torch.argmax(logp))
        prefix.append(tok)
        if tok == EOS_ID:
            break
    assert greedy_decode(m, src) == [t for t in prefix if t != EOS_ID]
    assert beam_search(m, src, beam=1)[0].ids == tuple(prefix)


def test_beam_deterministic():
    m = random_model(3, vocab_size=9)
    assert beam_search(m, [4, 5, 6], beam=5) == beam_search(m, [4, 5, 6], beam=5)


def test_beam_rejects_zero():
    with pytest.raises(ValueError):
        beam_search(random_model(0), [3], beam=0)


def test_banned_tokens_never_emitted():
    m = random_model(4, vocab_size=6)
    for h in beam_search(m, [4], beam=6, max_len=5):
        assert 0 not in h.ids and 1 not in h.ids


def test_beam_monotone_on_toy_models():
    worse = []
    for seed in range(30):
        m = random_model(seed, vocab_size=6)
        tops = [beam_search(m, [3, 4, 5], beam=b, max_len=4)[0].logprob for b in range(1, 7)]
        worse += [(seed, b + 1) for b in range(5) if tops[b + 1] < tops[b] - 1e-12]
    assert worse == []


def test_rerank_prefers_tags(small_vocab):
    t0, t1 = small_vocab.tag_id(0), small_vocab.tag_id(1)
    w = encode(small_vocab, ["send"])[0]
    hyps = [Hypothesis((w, EOS_ID), -0.1, True), Hypothesis((t0, t1, w, EOS_ID), -5.0, True),
            Hypothesis((t0, w, EOS_ID), -1.0, True)]
    assert rerank_tagged(hyps, small_vocab) is hyps[1]
    same = [Hypothesis((t0, w, EOS_ID), -3.0, True), Hypothesis((w, t0, EOS_ID), -2.0, True)]
    assert rerank_tagged(same, small_vocab) is same[1]
    assert rerank_tagged(hyps[:1], small_vocab) is hyps[0]
    with pytest.raises(ValueError):
        rerank_tagged([], small_vocab)


def test_rerank_finished_first(small_vocab):
    t0 = small_vocab.tag_id(0)
    hyps = [Hypothesis((t0, t0, t0), -0.5, False), Hypothesis((t0, EOS_ID), -4.0, True)]
    best = rerank_tagged(hyps, small_vocab)
    assert best.finished
    finished = [h for h in hyps if h.finished]
    count = lambda h: sum(small_vocab.is_tag_id(i) for i in h.ids)  # noqa: E731
    assert all(count(best) >= count(h) for h in finished)


OBJECTS = ["the data", "the report", "the plan", "the file", "the notes", "the budget", "the slides", "the draft"]
VERBS = ["send me", "check", "review", "share", "print"]


@pytest.fixture(scope="module")
def overfit_models():
    # every neutral request gains one leading tag, which always realizes as "please"
    src = [f"{v} {o}".split() for v in VERBS for o in OBJECTS]
    add = [ParallelPair(s, ["[TAG]_0"] + s, "add") for s in src]
    gen = [ParallelPair(["[TAG]_0"] + s, ["please"] + s, "generator") for s in src]
    vocab = train_bpe([Sentence(tuple(["please"] + s)) for s in src], vocab_size=120)
    cfg = dict(layers=1, heads=2, dim=32, dropout=0.0, max_len=32, vocab_fingerprint=vocab.fingerprint())
    tagger = Seq2SeqModel(ModelConfig(len(vocab), seed=0, **cfg), role="tagger")
    generator = Seq2SeqModel(ModelConfig(len(vocab), seed=1, **cfg))
    tc = TrainConfig(epochs=60, lr=3e-3, warmup=10, batch_size=8)
    train(tagger, add, vocab, tc)
    train(generator, gen, vocab, tc)
    return tagger, generator, vocab


def test_transfer_overfit(overfit_models):
    tagger, generator, small_vocab = overfit_models
    r = transfer(tagger, generator, "send me the data".split(), small_vocab)
    assert r.tagged.text == "[TAG]_0 send me the data"
    assert r.text == "please send me the data"
    assert r.warnings == []
    again = transfer(tagger, generator, "send me the data".split(), small_vocab)
    assert (again.tagged.tokens, again.output) == (r.tagged.tokens, r.output)


def test_truncation_warning(overfit_models):
    tagger, generator, small_vocab = overfit_models
    r = transfer(tagger, generator, "send me the data".split(), small_vocab, max_len=2)
    assert any("max_len" in w for w in r.warnings)


def test_transfer_jsonl_order(tmp_path, overfit_models):
    tagger, generator, small_vocab = overfit_models
    lines = ["send me the data", "check the report", "send me the data"]
    (tmp_path / "in.jsonl").write_text("".join(json.dumps({"text": t}) + "\n" for t in lines))
    transfer_jsonl(tagger, generator, small_vocab, tmp_path / "in.jsonl", tmp_path / "out.jsonl")
    recs = read_transfers_jsonl(tmp_path / "out.jsonl")
    assert [r["text"] for r in recs] == lines
    assert set(recs[0]) == {"text", "tagged", "output"}
    assert recs[0] == recs[2]
