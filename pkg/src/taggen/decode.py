"""Beam search, tag-count re-ranking and the end-to-end tag-then-generate transfer."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import torch

from .corpus import Sentence, tokenize
from .seq2seq import Seq2SeqModel, single_thread
from .tagdata import TaggedSentence
from .tokenizer import BOS_ID, EOS_ID, PAD_ID, BpeVocab, decode_tokens, encode

DEFAULT_BEAM = 5


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple[int, ...]
    logprob: float
    finished: bool = False

    def score(self, alpha: float = 0.0) -> float:
        if alpha == 0.0:
            return self.logprob
        return self.logprob / max(len(self.ids), 1) ** alpha


def default_max_len(n_input: int) -> int:
    return int(1.5 * n_input + 5)


@torch.no_grad()
def step_log_probs(model: Seq2SeqModel, memory, src_mask, prefixes: Sequence[Sequence[int]]):
    """Next-token log-probabilities (float64) for each BOS-prefixed hypothesis."""
    tgt = torch.tensor([[BOS_ID, *p] for p in prefixes], dtype=torch.long)
    n = len(prefixes)
    logits = model.decode(tgt, memory.expand(n, -1, -1), src_mask.expand(n, -1, -1, -1))
    return torch.log_softmax(logits[:, -1].to(torch.float64), dim=-1)


@torch.no_grad()
def beam_search(model: Seq2SeqModel, input_ids: Sequence[int], beam: int = DEFAULT_BEAM,
                max_len: int | None = None, alpha: float = 0.0,
                banned: Iterable[int] = (PAD_ID, BOS_ID)) -> list[Hypothesis]:
    """Length-capped beam search returning finished and live hypotheses, best first.

    Each step keeps the ``beam`` best one-token extensions of the live set by
    cumulative log-probability; extensions ending in EOS retire to the pool.
    Ranking divides log-probability by ``len ** alpha``.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len is None:
        max_len = default_max_len(len(input_ids))
    max_len = min(max_len, model.config.max_len)
    model.eval()
    src = list(input_ids)[: model.config.max_len - 1] + [EOS_ID]
    banned = sorted(set(banned))

    with single_thread():
        memory, src_mask = model.encode(torch.tensor([src], dtype=torch.long))
        active = [Hypothesis((), 0.0)]
        pool: list[Hypothesis] = []
        for _ in range(max_len):
            logp = step_log_probs(model, memory, src_mask, [h.ids for h in active])
            if banned:
                logp[:, banned] = -math.inf
            totals = torch.tensor([h.logprob for h in active], dtype=torch.float64)[:, None] + logp
            flat = totals.reshape(-1)
            k = min(beam, int(torch.isfinite(flat).sum()))
            if k == 0:
                break
            # stable descending order: ties go to the earlier hypothesis, then lower token id
            order = torch.argsort(-flat, stable=True)[:k].tolist()
            V = logp.shape[1]
            nxt = []
            for j in order:
                h, tok = active[j // V], j % V
                ext = Hypothesis(h.ids + (tok,), float(h.logprob + logp[j // V, tok]), tok == EOS_ID)
                (pool if ext.finished else nxt).append(ext)
            active = nxt
            if not active:
                break
            if alpha == 0.0 and len(pool) >= beam:
                kth = sorted((h.logprob for h in pool), reverse=True)[beam - 1]
                if max(h.logprob for h in active) <= kth:
                    break

    hyps = pool + active
    return sorted(hyps, key=lambda h: -h.score(alpha))


def greedy_decode(model: Seq2SeqModel, input_ids: Sequence[int], max_len: int | None = None) -> list[int]:
    best = beam_search(model, input_ids, beam=1, max_len=max_len)[0]
    return [i for i in best.ids if i != EOS_ID]


def count_tags(ids: Iterable[int], vocab: BpeVocab) -> int:
    return sum(1 for i in ids if vocab.is_tag_id(i))


def rerank_tagged(hyps: Sequence[Hypothesis], vocab: BpeVocab) -> Hypothesis:
    """Prefer finished hypotheses, then more tag tokens, then higher log-probability."""
    if not hyps:
        raise ValueError("rerank_tagged needs at least one hypothesis")
    return sorted(hyps, key=lambda h: (not h.finished, -count_tags(h.ids, vocab), -h.logprob))[0]


@dataclass
class TransferResult:
    source: list[str]
    tagged: TaggedSentence
    output: list[str]
    warnings: list[str] = field(default_factory=list)

    @property
    def text(self) -> str:
        return " ".join(self.output)

    def record(self) -> dict:
        return {"text": " ".join(self.source), "tagged": self.tagged.text, "output": self.text}


def transfer(tagger: Seq2SeqModel, generator: Seq2SeqModel, s: Sentence | Sequence[str],
             vocab: BpeVocab, beam: int = DEFAULT_BEAM, alpha: float = 0.0,
             max_len: int | None = None) -> TransferResult:
    """Tag the sentence, then generate from the tagged form; both stages are returned."""
    tokens = list(s.tokens if isinstance(s, Sentence) else s)
    warnings = []

    src_ids = encode(vocab, tokens)
    # re-rank only the final n-best list, not every hypothesis retired along the way
    z_hyp = rerank_tagged(beam_search(tagger, src_ids, beam, max_len, alpha)[:beam], vocab)
    if not z_hyp.finished:
        warnings.append("tagger hit max_len before EOS; tagged sentence truncated")
    z_tokens = decode_tokens(vocab, z_hyp.ids)
    tagged = TaggedSentence.from_tokens(z_tokens)

    z_ids = encode(vocab, z_tokens)
    out_hyp = beam_search(generator, z_ids, beam, max_len, alpha)[0]
    if not out_hyp.finished:
        warnings.append("generator hit max_len before EOS; output truncated")
    output = [t for t in decode_tokens(vocab, out_hyp.ids)]
    return TransferResult(tokens, tagged, output, warnings)


def transfer_jsonl(tagger, generator, vocab, in_path, out_path, beam=DEFAULT_BEAM) -> list[TransferResult]:
    """Batch transfer of ``{"text": ...}`` lines, preserving input order."""
    results = []
    with Path(in_path).open(encoding="utf-8") as fin:
        for line in fin:
            if line.strip():
                rec = json.loads(line)
                toks = rec.get("tokens") or tokenize(rec["text"])
                results.append(transfer(tagger, generator, toks, vocab, beam))
    write_transfers_jsonl(results, out_path)
    return results


def write_transfers_jsonl(results: Iterable[TransferResult], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in results:
            fh.write(json.dumps(r.record()) + "\n")


def read_transfers_jsonl(path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
