import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from oracles import fd_block_errors
from taggen.corpus import Sentence, is_tag
from taggen.decode import greedy_decode
from taggen.seq2seq import (CheckpointError, ModelConfig, NoiseConfig, NumericError, Seq2SeqModel,
                            TrainConfig, apply_noise, collate, count_parameters, eval_loss,
                            flat_parameters, forward_loss, load_checkpoint, parameter_blocks,
                            save_checkpoint, train)
from taggen.tagdata import ParallelPair
from taggen.tokenizer import PAD_ID, encode, train_bpe


def batch_from(vocab, texts):
    return [(encode(vocab, t.split()), encode(vocab, t.split())) for t in texts]


BATCH_TEXT = ["please send me the data", "check the report", "thanks for the update today"]


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, dim=10, heads=3)
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=10, dropout=1.0)
    assert ModelConfig(vocab_size=10, dim=8, heads=2).ff_dim == 32


def test_default_model_size():
    cfg = ModelConfig(vocab_size=10)
    assert (cfg.layers, cfg.heads, cfg.dim, cfg.dropout) == (4, 4, 512, 0.3)


def test_parameter_count(tiny_model):
    m = tiny_model(dim=16, layers=2)
    assert count_parameters(m.config) == sum(p.numel() for p in m.parameters())


def test_initial_loss_near_log_v(small_vocab):
    cfg = ModelConfig.from_preset("desk", small_vocab, dropout=0.0)
    m = Seq2SeqModel(cfg)
    loss, _ = forward_loss(m, batch_from(small_vocab, BATCH_TEXT))
    assert abs(loss - math.log(len(small_vocab))) <= 0.1 * math.log(len(small_vocab))


def test_gradients_tiny_float64(tiny_model, small_vocab):
    m = tiny_model(dim=8, heads=2, layers=2, dtype="float64")
    batch = batch_from(small_vocab, BATCH_TEXT)
    # a 1e-3 step can straddle a ReLU kink; 1e-4 keeps the check smooth
    errors = fd_block_errors(m, lambda: forward_loss(m, batch), parameter_blocks(m), eps=1e-4)
    assert len(errors) == 2 * 3 + 2 * 4 + 3  # per-layer blocks plus embedding, final norm, output
    assert max(errors.values()) < 1e-4, errors


def test_duplicated_batch_same_loss(tiny_model, small_vocab):
    m = tiny_model(dtype="float64")
    b = batch_from(small_vocab, BATCH_TEXT)
    assert forward_loss(m, b)[0] == pytest.approx(forward_loss(m, b + b)[0], abs=1e-12)


def test_nan_raises(tiny_model, small_vocab):
    m = tiny_model()
    with torch.no_grad():
        m.output.bias[0] = float("nan")
    with pytest.raises(NumericError, match="batch 7"):
        forward_loss(m, batch_from(small_vocab, BATCH_TEXT), batch_id=7)


def test_padding_invariance(tiny_model, small_vocab):
    m = tiny_model(dtype="float64")
    b = batch_from(small_vocab, BATCH_TEXT)
    assert abs(eval_loss(m, b) - eval_loss(m, b, pad_to=30)) < 1e-9


def test_eval_mode_deterministic(tiny_model, small_vocab):
    m = tiny_model(dropout=0.3)
    b = batch_from(small_vocab, BATCH_TEXT)
    assert eval_loss(m, b) == eval_loss(m, b)


def test_attention_rows_sum_to_one(tiny_model, small_vocab):
    m = tiny_model(layers=2)
    m.keep_attention(True)
    src, tgt_in, _ = collate(batch_from(small_vocab, BATCH_TEXT), m.config.max_len)
    m.eval()
    with torch.no_grad():
        m(src, tgt_in)
    maps = m.attention_maps()
    assert len(maps) == 6
    for a in maps:
        torch.testing.assert_close(a.sum(-1), torch.ones_like(a.sum(-1)), atol=1e-6, rtol=0)
    m.keep_attention(False)


def test_causality(tiny_model, small_vocab):
    m = tiny_model(dtype="float64").eval()
    src, tgt_in, _ = collate(batch_from(small_vocab, BATCH_TEXT[:1]), m.config.max_len)
    j = 3
    other = tgt_in.clone()
    other[0, j] = (other[0, j] + 5) % len(small_vocab) or 5
    with torch.no_grad():
        a, b = m(src, tgt_in), m(src, other)
    assert torch.equal(a[0, :j], b[0, :j])
    assert not torch.equal(a[0, j:], b[0, j:])


def copy_pairs(n=50, seed=0):
    rng = np.random.default_rng(seed)
    words = ["send", "the", "data", "report", "now", "please", "check", "plan", "today", "me"]
    seen, pairs = set(), []
    while len(pairs) < n:
        toks = list(rng.choice(words, int(rng.integers(3, 7))))
        if tuple(toks) not in seen:
            seen.add(tuple(toks))
            pairs.append(ParallelPair(toks, toks, "generator"))
    return pairs


def test_copy_task_overfits():
    pairs = copy_pairs()
    vocab = train_bpe([Sentence(tuple(p.input)) for p in pairs], vocab_size=60)
    m = Seq2SeqModel(ModelConfig.from_preset("desk", vocab, dropout=0.0, max_len=64))
    train(m, pairs, vocab, TrainConfig(epochs=200, lr=2e-3, warmup=50, batch_size=10))
    hits = sum(greedy_decode(m, encode(vocab, p.input)) == encode(vocab, p.output) for p in pairs)
    assert hits / len(pairs) >= 0.98
    assert m.history[-1] < m.history[0]


def test_lr_zero_keeps_parameters(tiny_model, small_vocab):
    m = tiny_model()
    before = flat_parameters(m).clone()
    pairs = [ParallelPair(t.split(), t.split(), "generator") for t in BATCH_TEXT]
    train(m, pairs, small_vocab, TrainConfig(epochs=2, lr=0.0, warmup=1, batch_size=2))
    assert torch.equal(before, flat_parameters(m))


def test_training_deterministic(tiny_model, small_vocab):
    pairs = [ParallelPair(t.split(), t.split(), "generator") for t in BATCH_TEXT]
    cfg = TrainConfig(epochs=3, lr=1e-3, warmup=2, batch_size=2, seed=5, noise=NoiseConfig())
    a = train(tiny_model(dropout=0.1), pairs, small_vocab, cfg)
    b = train(tiny_model(dropout=0.1), pairs, small_vocab, cfg)
    assert torch.equal(flat_parameters(a), flat_parameters(b))
    assert a.history == b.history


def test_train_requires_pairs(tiny_model, small_vocab):
    with pytest.raises(ValueError):
        train(tiny_model(), [], small_vocab)


def test_checkpoint_roundtrip(tmp_path, tiny_model, small_vocab):
    m = tiny_model(seed=3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(m, path)
    back = load_checkpoint(path, small_vocab)
    b = batch_from(small_vocab, BATCH_TEXT)
    assert eval_loss(back, b) == eval_loss(m, b)
    assert back.config == m.config
    assert path.read_bytes()[:8] == b"TAGGENCK"


def test_checkpoint_periodic(tmp_path, tiny_model, small_vocab):
    pairs = [ParallelPair(t.split(), t.split(), "generator") for t in BATCH_TEXT]
    train(tiny_model(), pairs, small_vocab, TrainConfig(epochs=4, warmup=1, batch_size=4,
                                                        checkpoint_every=2), checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch_0002.ckpt", "epoch_0004.ckpt", "model.ckpt"]


def test_checkpoint_errors(tmp_path, tiny_model, small_vocab):
    path = tmp_path / "m.ckpt"
    save_checkpoint(tiny_model(), path)
    blob = path.read_bytes()
    (tmp_path / "t.ckpt").write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "v.ckpt").write_bytes(blob[:8] + b"\x09\x00\x00\x00" + blob[12:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v.ckpt")
    other = train_bpe([Sentence(("zz", "yy", "xx"))], vocab_size=40)
    with pytest.raises(CheckpointError, match="vocabulary"):
        load_checkpoint(path, other)


def test_noise_identity_and_drop():
    toks = ["send", "me", "the", "data"]
    assert apply_noise(NoiseConfig(1, 0.0, 0.0), toks, seed=0) == toks
    assert apply_noise(NoiseConfig(3, 1.0, 0.0), toks, seed=0) == []
    assert apply_noise(NoiseConfig(1, 0.0, 1.0), toks, seed=0, replacements=["x"]) == ["x"] * 4


def test_noise_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig(shuffle_window=0)
    with pytest.raises(ValueError):
        NoiseConfig(drop_prob=1.5)


word = st.sampled_from(["send", "me", "the", "data", "now", "[TAG]_0", "[TAG]_1", "[TAG]_2"])


@given(st.lists(word, min_size=1, max_size=15), st.integers(1, 6), st.floats(0, 1), st.floats(0, 1),
       st.integers(0, 2 ** 32 - 1))
@settings(max_examples=300, deadline=None)
def test_noise_never_touches_tags(tokens, window, drop, rep, seed):
    out = apply_noise(NoiseConfig(window, drop, rep), tokens, seed=seed, replacements=["zz"])
    assert [t for t in out if is_tag(t)] == [t for t in tokens if is_tag(t)]
    # tag-free segments only lose or change tokens, they never grow
    assert len(out) <= len(tokens)
    if drop == 0 and rep == 0:
        assert sorted(out) == sorted(tokens)
        # displacement bounded by the window
        if not any(map(is_tag, tokens)):
            for i, t in enumerate(out):
                assert any(tokens[j] == t for j in range(max(0, i - window), min(len(tokens), i + window + 1)))


def test_collate_shapes():
    src, tgt_in, tgt_out = collate([([5, 6], [7]), ([5], [7, 8, 9])], max_len=10)
    assert src.tolist() == [[5, 6, 2], [5, 2, PAD_ID]]
    assert tgt_in.tolist() == [[1, 7, 0, 0], [1, 7, 8, 9]]
    assert tgt_out.tolist() == [[7, 2, 0, 0], [7, 8, 9, 2]]
