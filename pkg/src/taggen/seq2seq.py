"""Compact transformer encoder-decoder used for both the tagger and the generator.

Training is single-threaded and seeded so a fixed config, data and seed give
bitwise-identical parameters. Checkpoints are a small versioned binary
container::

    b"TAGGENCK" | u32 version | u32 header_len | header JSON | payload | sha256

The payload holds every parameter, in header order, as little-endian floats.
"""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import is_tag
from .tagdata import ParallelPair
from .tokenizer import BOS_ID, EOS_ID, PAD_ID, BpeVocab, encode

log = logging.getLogger(__name__)

MAGIC = b"TAGGENCK"
CHECKPOINT_VERSION = 1

PRESETS = {
    "paper": dict(layers=4, heads=4, dim=512, dropout=0.3),
    "desk": dict(layers=2, heads=2, dim=64, dropout=0.1),
}
TRAIN_PRESETS = {
    "paper": dict(lr=3e-4, warmup=4000, batch_size=64),
    "desk": dict(lr=1e-3, warmup=100, batch_size=32),
}


class NumericError(FloatingPointError):
    pass


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    layers: int = 4
    heads: int = 4
    dim: int = 512
    ff_dim: int | None = None
    dropout: float = 0.3
    max_len: int = 128
    seed: int = 0
    dtype: str = "float32"
    vocab_fingerprint: str = ""

    def __post_init__(self):
        if self.ff_dim is None:
            self.ff_dim = 4 * self.dim
        if self.dim % self.heads:
            raise ValueError(f"dim={self.dim} is not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @classmethod
    def from_preset(cls, preset: str, vocab: BpeVocab, **overrides) -> "ModelConfig":
        kw = dict(PRESETS[preset])
        kw.update(overrides)
        return cls(vocab_size=len(vocab), vocab_fingerprint=vocab.fingerprint(), **kw)

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32


@dataclass
class NoiseConfig:
    shuffle_window: int = 3
    drop_prob: float = 0.1
    replace_prob: float = 0.1

    def __post_init__(self):
        if self.shuffle_window < 1:
            raise ValueError("shuffle_window must be >= 1")
        for name in ("drop_prob", "replace_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 3e-4
    warmup: int = 4000
    batch_size: int = 64
    clip_norm: float = 1.0
    seed: int = 0
    noise: NoiseConfig | None = None
    checkpoint_every: int = 0
    log_every: int = 0

    @classmethod
    def from_preset(cls, preset: str, **overrides) -> "TrainConfig":
        kw = dict(TRAIN_PRESETS[preset])
        kw.update(overrides)
        return cls(**kw)


@contextlib.contextmanager
def single_thread():
    prev = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(prev)


def sinusoidal_positions(max_len: int, dim: int) -> torch.Tensor:
    pos = torch.arange(max_len, dtype=torch.float64)[:, None]
    inv = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(max_len, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * inv)
    pe[:, 1::2] = torch.cos(pos * inv[: dim // 2])
    return pe


class MultiHeadAttention(nn.Module):
    def __init__(self, dim, heads, dropout):
        super().__init__()
        self.heads = heads
        self.d_head = dim // heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)
        self.keep_attention = False
        self.last_attention = None

    def forward(self, x, memory, mask):
        # mask: broadcastable to (B, 1, Tq, Tk), True where attention is blocked
        B, Tq, D = x.shape
        Tk = memory.shape[1]
        q = self.q(x).view(B, Tq, self.heads, self.d_head).transpose(1, 2)
        k = self.k(memory).view(B, Tk, self.heads, self.d_head).transpose(1, 2)
        v = self.v(memory).view(B, Tk, self.heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        scores = scores.masked_fill(mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        if self.keep_attention:
            self.last_attention = attn.detach()
        out = self.dropout(attn) @ v
        return self.o(out.transpose(1, 2).reshape(B, Tq, D))


class FeedForward(nn.Module):
    def __init__(self, dim, ff_dim, dropout):
        super().__init__()
        self.fc1 = nn.Linear(dim, ff_dim)
        self.fc2 = nn.Linear(ff_dim, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.fc2(self.dropout(F.relu(self.fc1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.dim)
        self.attn = MultiHeadAttention(cfg.dim, cfg.heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.dim)
        self.ffn = FeedForward(cfg.dim, cfg.ff_dim, cfg.dropout)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, src_mask):
        h = self.norm1(x)
        x = x + self.dropout(self.attn(h, h, src_mask))
        return x + self.dropout(self.ffn(self.norm2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.dim)
        self.self_attn = MultiHeadAttention(cfg.dim, cfg.heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.dim)
        self.cross_attn = MultiHeadAttention(cfg.dim, cfg.heads, cfg.dropout)
        self.norm3 = nn.LayerNorm(cfg.dim)
        self.ffn = FeedForward(cfg.dim, cfg.ff_dim, cfg.dropout)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, y, memory, self_mask, src_mask):
        h = self.norm1(y)
        y = y + self.dropout(self.self_attn(h, h, self_mask))
        y = y + self.dropout(self.cross_attn(self.norm2(y), memory, src_mask))
        return y + self.dropout(self.ffn(self.norm3(y)))


class Seq2SeqModel(nn.Module):
    """Pre-norm transformer with a shared source/target embedding."""

    def __init__(self, config: ModelConfig, role: str = "generator"):
        super().__init__()
        self.config = config
        self.role = role
        cfg = config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.embedding = nn.Embedding(cfg.vocab_size, cfg.dim)
            nn.init.normal_(self.embedding.weight, std=cfg.dim ** -0.5)
            self.encoder = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))
            self.decoder = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.layers))
            self.enc_norm = nn.LayerNorm(cfg.dim)
            self.dec_norm = nn.LayerNorm(cfg.dim)
            self.output = nn.Linear(cfg.dim, cfg.vocab_size)
        self.dropout = nn.Dropout(cfg.dropout)
        self.register_buffer("positions", sinusoidal_positions(cfg.max_len + 1, cfg.dim),
                             persistent=False)
        self.to(cfg.torch_dtype)

    def _embed(self, ids):
        x = self.embedding(ids) * math.sqrt(self.config.dim)
        return self.dropout(x + self.positions[: ids.shape[1]])

    def encode(self, src):
        src_mask = (src == PAD_ID)[:, None, None, :]
        x = self._embed(src)
        for layer in self.encoder:
            x = layer(x, src_mask)
        return self.enc_norm(x), src_mask

    def decode(self, tgt_in, memory, src_mask):
        T = tgt_in.shape[1]
        causal = torch.triu(torch.ones(T, T, dtype=torch.bool, device=tgt_in.device), 1)
        self_mask = causal[None, None] | (tgt_in == PAD_ID)[:, None, None, :]
        y = self._embed(tgt_in)
        for layer in self.decoder:
            y = layer(y, memory, self_mask, src_mask)
        return self.output(self.dec_norm(y))

    def forward(self, src, tgt_in):
        memory, src_mask = self.encode(src)
        return self.decode(tgt_in, memory, src_mask)

    def keep_attention(self, flag: bool = True):
        for m in self.modules():
            if isinstance(m, MultiHeadAttention):
                m.keep_attention = flag
                m.last_attention = None

    def attention_maps(self):
        return [m.last_attention for m in self.modules()
                if isinstance(m, MultiHeadAttention) and m.last_attention is not None]


def count_parameters(cfg: ModelConfig) -> int:
    """Closed-form parameter count for a config."""
    d, f, V, L = cfg.dim, cfg.ff_dim, cfg.vocab_size, cfg.layers
    attn = 4 * (d * d + d)
    ffn = d * f + f + f * d + d
    norm = 2 * d
    enc = attn + ffn + 2 * norm
    dec = 2 * attn + ffn + 3 * norm
    return V * d + L * (enc + dec) + 2 * norm + d * V + V


def parameter_blocks(model: Seq2SeqModel) -> dict[str, list[tuple[str, nn.Parameter]]]:
    """Group parameters into embedding, per-layer attention/FFN/norm, and output blocks."""
    blocks: dict[str, list] = {}
    for name, p in model.named_parameters():
        parts = name.split(".")
        if parts[0] in ("encoder", "decoder"):
            sub = parts[2]
            kind = "norm" if sub.startswith("norm") else sub
            key = f"{parts[0]}.{parts[1]}.{kind}"
        elif parts[0] in ("enc_norm", "dec_norm"):
            key = "final_norm"
        else:
            key = parts[0]
        blocks.setdefault(key, []).append((name, p))
    return blocks


def flat_parameters(model: nn.Module) -> torch.Tensor:
    return torch.cat([p.detach().reshape(-1) for p in model.parameters()])


# -- batching and loss -------------------------------------------------------

EncodedPair = tuple[Sequence[int], Sequence[int]]


def collate(batch: Sequence[EncodedPair], max_len: int, pad_to: int | None = None):
    """Pad a batch into (src, tgt_in, tgt_out); sources end in EOS, targets are BOS-shifted."""
    srcs = [list(s)[: max_len - 1] + [EOS_ID] for s, _ in batch]
    tgts = [list(t)[: max_len - 1] for _, t in batch]
    S = max(len(s) for s in srcs)
    T = max(len(t) for t in tgts) + 1
    if pad_to is not None:
        S = max(S, pad_to)
        T = max(T, pad_to)
    src = torch.full((len(batch), S), PAD_ID, dtype=torch.long)
    tgt_in = torch.full((len(batch), T), PAD_ID, dtype=torch.long)
    tgt_out = torch.full((len(batch), T), PAD_ID, dtype=torch.long)
    for i, (s, t) in enumerate(zip(srcs, tgts)):
        src[i, : len(s)] = torch.tensor(s, dtype=torch.long)
        tgt_in[i, : len(t) + 1] = torch.tensor([BOS_ID] + t, dtype=torch.long)
        tgt_out[i, : len(t) + 1] = torch.tensor(t + [EOS_ID], dtype=torch.long)
    return src, tgt_in, tgt_out


def batch_loss(model: Seq2SeqModel, src, tgt_in, tgt_out):
    logits = model(src, tgt_in)
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), tgt_out.reshape(-1), ignore_index=PAD_ID
    )


def forward_loss(model: Seq2SeqModel, batch: Sequence[EncodedPair], train: bool = False,
                 batch_id: int | str = 0, pad_to: int | None = None):
    """Teacher-forced NLL averaged over non-PAD target tokens, and its gradient.

    The gradient is returned as one flat tensor in ``model.parameters()`` order.
    Dropout is active only when ``train`` is set.
    """
    model.train(train)
    model.zero_grad(set_to_none=True)
    src, tgt_in, tgt_out = collate(batch, model.config.max_len, pad_to)
    loss = batch_loss(model, src, tgt_in, tgt_out)
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite loss {loss.item()} on batch {batch_id}")
    loss.backward()
    grads = torch.cat([
        (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
        for p in model.parameters()
    ])
    return float(loss.item()), grads


@torch.no_grad()
def eval_loss(model: Seq2SeqModel, batch: Sequence[EncodedPair], pad_to: int | None = None) -> float:
    model.eval()
    return float(batch_loss(model, *collate(batch, model.config.max_len, pad_to)).item())


# -- denoising ---------------------------------------------------------------

def apply_noise(cfg: NoiseConfig, tokens: Sequence[str], seed=None,
                replacements: Sequence[str] = (), rng: np.random.Generator | None = None) -> list[str]:
    """Local shuffle, then drops, then random replacements; tag tokens are never touched.

    Shuffling sorts each tag-free segment by ``index + U[0, shuffle_window)``,
    so a window of 1 keeps order and no token crosses a tag. Replacements are
    drawn from ``replacements`` (skipped when it is empty).
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    tokens = list(tokens)

    segments: list[list[str]] = [[]]
    for tok in tokens:
        if is_tag(tok):
            segments.append([tok])
            segments.append([])
        else:
            segments[-1].append(tok)

    out: list[str] = []
    for seg in segments:
        if len(seg) == 1 and is_tag(seg[0]):
            out.append(seg[0])
            continue
        if cfg.shuffle_window > 1 and len(seg) > 1:
            keys = np.arange(len(seg)) + rng.uniform(0, cfg.shuffle_window, len(seg))
            seg = [seg[i] for i in np.argsort(keys, kind="stable")]
        for tok in seg:
            if cfg.drop_prob > 0 and rng.random() < cfg.drop_prob:
                continue
            if replacements and cfg.replace_prob > 0 and rng.random() < cfg.replace_prob:
                tok = replacements[rng.integers(len(replacements))]
            out.append(tok)
    return out


# -- training ----------------------------------------------------------------

def encode_pairs(vocab: BpeVocab, pairs: Sequence[ParallelPair]) -> list[EncodedPair]:
    return [(encode(vocab, p.input), encode(vocab, p.output)) for p in pairs]


def _inverse_sqrt(warmup: int):
    warmup = max(1, warmup)

    def factor(step: int) -> float:
        s = step + 1
        return min(s / warmup, math.sqrt(warmup / s))

    return factor


def train(model: Seq2SeqModel, pairs: Sequence[ParallelPair], vocab: BpeVocab,
          config: TrainConfig | None = None, checkpoint_dir=None, **overrides) -> Seq2SeqModel:
    """Mini-batch Adam training with inverse-sqrt warmup; returns the same model.

    When ``config.noise`` is set, the inputs (never the outputs) are re-noised
    every epoch. Per-epoch mean losses are stored in ``model.history``.
    """
    cfg = dataclasses.replace(config or TrainConfig(), **overrides)
    if not pairs:
        raise ValueError("train needs at least one pair")
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    targets = [encode(vocab, p.output) for p in pairs]
    clean_inputs = [encode(vocab, p.input) for p in pairs]
    replacements = sorted({t for p in pairs for t in p.input if not is_tag(t)})
    rng = np.random.default_rng(cfg.seed)

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.98), eps=1e-9)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, _inverse_sqrt(cfg.warmup))
    history: list[float] = []
    initial = None
    blowups = 0

    with single_thread(), torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        for epoch in range(1, cfg.epochs + 1):
            if cfg.noise is not None:
                inputs = [encode(vocab, apply_noise(cfg.noise, p.input, rng=rng,
                                                    replacements=replacements))
                          for p in pairs]
            else:
                inputs = clean_inputs
            order = rng.permutation(len(pairs))
            model.train()
            total, weight = 0.0, 0
            for b in range(0, len(order), cfg.batch_size):
                idx = order[b:b + cfg.batch_size]
                batch = [(inputs[i], targets[i]) for i in idx]
                src, tgt_in, tgt_out = collate(batch, model.config.max_len)
                opt.zero_grad(set_to_none=True)
                loss = batch_loss(model, src, tgt_in, tgt_out)
                if not torch.isfinite(loss):
                    raise NumericError(f"non-finite loss at epoch {epoch}, batch {b // cfg.batch_size}")
                loss.backward()
                if cfg.clip_norm:
                    nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
                opt.step()
                sched.step()
                for p in model.parameters():
                    if not torch.isfinite(p).all():
                        raise NumericError(f"non-finite parameters after epoch {epoch}, "
                                           f"batch {b // cfg.batch_size}")
                n_tok = int((tgt_out != PAD_ID).sum())
                total += float(loss.item()) * n_tok
                weight += n_tok
            epoch_loss = total / max(weight, 1)
            history.append(epoch_loss)
            if initial is None:
                initial = epoch_loss
            blowups = blowups + 1 if epoch_loss > 10 * initial else 0
            if blowups >= 3:
                raise TrainingDiverged(f"loss above 10x its initial value for 3 epochs: {history}")
            if cfg.log_every and epoch % cfg.log_every == 0:
                log.info("%s epoch %d loss %.4f", model.role, epoch, epoch_loss)
            if checkpoint_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
                save_checkpoint(model, checkpoint_dir / f"epoch_{epoch:04d}.ckpt")

    model.eval()
    model.history = history
    if checkpoint_dir is not None:
        save_checkpoint(model, checkpoint_dir / "model.ckpt")
    return model


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: Seq2SeqModel, path) -> None:
    dtype = "<f8" if model.config.dtype == "float64" else "<f4"
    params = [(name, tuple(p.shape)) for name, p in model.named_parameters()]
    payload = b"".join(
        p.detach().cpu().numpy().astype(dtype, copy=False).tobytes() for p in model.parameters()
    )
    header = json.dumps({
        "config": asdict(model.config),
        "role": model.role,
        "dtype": dtype,
        "params": params,
        "payload_bytes": len(payload),
    }, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header)) + header + payload
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path, vocab: BpeVocab | None = None) -> Seq2SeqModel:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 8 + 32 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack_from("<II", blob, len(MAGIC))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupt file)")
    start = len(MAGIC) + 8
    try:
        header = json.loads(body[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    payload = body[start + header_len:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, header says "
                              f"{header['payload_bytes']}")

    cfg = ModelConfig(**header["config"])
    if vocab is not None:
        if cfg.vocab_size != len(vocab) or (cfg.vocab_fingerprint and
                                            cfg.vocab_fingerprint != vocab.fingerprint()):
            raise CheckpointError(f"{path}: checkpoint was trained with a different vocabulary")
    model = Seq2SeqModel(cfg, role=header["role"])
    named = dict(model.named_parameters())
    arr = np.frombuffer(payload, dtype=header["dtype"])
    offset = 0
    with torch.no_grad():
        for name, shape in header["params"]:
            if name not in named or tuple(named[name].shape) != tuple(shape):
                raise CheckpointError(f"{path}: parameter {name} does not match the config")
            n = int(np.prod(shape)) if shape else 1
            chunk = arr[offset:offset + n].astype(header["dtype"].replace("<", "="))
            named[name].copy_(torch.from_numpy(chunk.copy()).reshape(shape))
            offset += n
    if offset != arr.size or len(header["params"]) != len(named):
        raise CheckpointError(f"{path}: parameter payload does not match the config")
    model.eval()
    return model
