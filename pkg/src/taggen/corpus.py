"""Sentence cleaning, corpus ingestion, style-score bucketing and splits.

Sentences are lowercased and word-tokenized with a small regex tokenizer.
A raw line is dropped when it is shorter than three word tokens, is at least
80% numeric, contains an e-mail address, or contains a run of three or more
identical punctuation/symbol characters.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

SPLITS = ("train", "test", "dev")
N_BUCKETS = 10

TAG_PATTERN = re.compile(r"\[tag\]_(\d+)", re.IGNORECASE)
_TOKEN_RE = re.compile(
    r"\[tag\]_\d+"  # positional tag tokens stay atomic
    r"|\d+(?:[.,]\d+)*"
    r"|\w+(?:'\w+)*"
    r"|[^\w\s]",
    re.IGNORECASE,
)
_EMAIL_RE = re.compile(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+")
_SPURIOUS_RE = re.compile(r"([^\w\s])\1\1")
_NUMERIC_RE = re.compile(r"[\d.,]*\d[\d.,]*")

MIN_WORDS = 3
MAX_NUMERIC_FRACTION = 0.8


class EmptyCorpusError(ValueError):
    """Raised when a corpus has no usable sentences."""


class ContractViolation(ValueError):
    """Raised when a caller-supplied function breaks its declared contract."""


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]
    raw: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise ValueError("a Sentence needs at least one token")
        for tok in self.tokens:
            if not tok or any(ch.isspace() for ch in tok):
                raise ValueError(f"invalid token {tok!r}")

    @classmethod
    def from_text(cls, text: str) -> "Sentence":
        """Tokenize without applying the cleaning filters."""
        return cls(tuple(tokenize(text)), raw=text)

    @property
    def text(self) -> str:
        return detokenize(self.tokens)

    def __len__(self):
        return len(self.tokens)


@dataclass
class StyleCorpus:
    sentences: list[Sentence]
    style_id: str
    filter_counts: dict[str, int] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.sentences)

    def __len__(self):
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)


@dataclass
class ScoredBucket:
    bucket_index: int
    split: str
    sentences: list[tuple[Sentence, float]]


def canonical_tag(token: str) -> str | None:
    m = TAG_PATTERN.fullmatch(token)
    return f"[TAG]_{int(m.group(1))}" if m else None


def is_tag(token: str) -> bool:
    return TAG_PATTERN.fullmatch(token) is not None


def tokenize(text: str) -> list[str]:
    tokens = []
    for tok in _TOKEN_RE.findall(text.lower()):
        tag = canonical_tag(tok)
        tokens.append(tag if tag is not None else tok)
    return tokens


def detokenize(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


def _is_word(token: str) -> bool:
    return any(ch.isalnum() for ch in token)


def _is_numeric(token: str) -> bool:
    return _NUMERIC_RE.fullmatch(token) is not None


def rejection_reason(raw: str) -> str | None:
    """Name of the first cleaning rule ``raw`` fails, or None if it passes."""
    if _EMAIL_RE.search(raw):
        return "email"
    if _SPURIOUS_RE.search(raw):
        return "spurious_chars"
    words = [t for t in tokenize(raw) if _is_word(t)]
    if len(words) < MIN_WORDS:
        return "too_short"
    if sum(map(_is_numeric, words)) >= MAX_NUMERIC_FRACTION * len(words):
        return "numeric"
    return None


def clean_sentence(raw: str) -> Sentence | None:
    if rejection_reason(raw) is not None:
        return None
    return Sentence(tuple(tokenize(raw)), raw=raw)


def ingest_corpus(path, style_id: str) -> StyleCorpus:
    """Read one sentence per line, clean, and drop exact duplicates.

    The first occurrence of each token list is kept, in file order.
    """
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    counts: Counter[str] = Counter()
    seen: set[tuple[str, ...]] = set()
    kept = []
    for line in lines:
        reason = rejection_reason(line)
        if reason is not None:
            counts[reason] += 1
            continue
        sent = Sentence(tuple(tokenize(line)), raw=line)
        if sent.tokens in seen:
            counts["duplicate"] += 1
            continue
        seen.add(sent.tokens)
        kept.append(sent)
    counts["kept"] = len(kept)
    counts["lines"] = len(lines)
    if not kept:
        raise EmptyCorpusError(f"{path}: no sentences survived cleaning")
    return StyleCorpus(kept, style_id, dict(sorted(counts.items())))


def split_sizes(n: int) -> tuple[int, int, int]:
    """Train/test/dev sizes for an 80:10:10 split of ``n`` items."""
    n_test = int(math.floor(0.1 * n + 0.5))
    n_dev = n_test
    return n - n_test - n_dev, n_test, n_dev


def split_indices(n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    order = rng.permutation(n)
    n_train, n_test, _ = split_sizes(n)
    return {
        "train": np.sort(order[:n_train]),
        "test": np.sort(order[n_train:n_train + n_test]),
        "dev": np.sort(order[n_train + n_test:]),
    }


def split_corpus(corpus: StyleCorpus, seed: int = 0) -> dict[str, StyleCorpus]:
    """Deterministic 80:10:10 split of an unscored corpus."""
    idx = split_indices(len(corpus), np.random.default_rng(seed))
    return {
        name: StyleCorpus([corpus.sentences[i] for i in ids], corpus.style_id)
        for name, ids in idx.items()
    }


def bucket_index(score: float) -> int:
    return min(int(math.floor(N_BUCKETS * score)), N_BUCKETS - 1)


def bucket_by_score(
    corpus: StyleCorpus | Sequence[Sentence],
    scorer: Callable[[Sentence], float],
    seed: int = 0,
) -> list[ScoredBucket]:
    """Score every sentence, assign it to one of ten buckets and split each.

    Returns a ScoredBucket per (bucket, split) pair, ordered by bucket then
    train/test/dev. Within a split, sentences keep corpus order.
    """
    sentences = corpus.sentences if isinstance(corpus, StyleCorpus) else list(corpus)
    scored = []
    for sent in sentences:
        s = float(scorer(sent))
        if not (0.0 <= s <= 1.0):
            raise ContractViolation(f"scorer returned {s!r} for {sent.text!r}; expected [0, 1]")
        scored.append((sent, s))
    return bucket_scored(scored, seed)


def bucket_scored(scored: Sequence[tuple[Sentence, float]], seed: int = 0) -> list[ScoredBucket]:
    members: list[list[tuple[Sentence, float]]] = [[] for _ in range(N_BUCKETS)]
    for sent, s in scored:
        members[bucket_index(s)].append((sent, s))

    out = []
    for b, items in enumerate(members):
        idx = split_indices(len(items), np.random.default_rng([seed, b]))
        for split in SPLITS:
            out.append(ScoredBucket(b, split, [items[i] for i in idx[split]]))
    return out


def target_style_train_set(buckets: Sequence[ScoredBucket], style_id: str = "target") -> StyleCorpus:
    """The train split of the top bucket, used as the target-style corpus."""
    sents = [s for b in buckets if b.bucket_index == N_BUCKETS - 1 and b.split == "train"
             for s, _ in b.sentences]
    if not sents:
        raise EmptyCorpusError("bucket 9 has no training sentences")
    return StyleCorpus(sents, style_id)


# -- JSONL ------------------------------------------------------------------

def sentence_record(sent: Sentence, score=None, bucket=None, split=None) -> dict:
    return {"text": sent.raw or sent.text, "tokens": list(sent.tokens),
            "score": score, "bucket": bucket, "split": split}


def write_buckets_jsonl(buckets: Sequence[ScoredBucket], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for b in buckets:
            for sent, s in b.sentences:
                fh.write(json.dumps(sentence_record(sent, s, b.bucket_index, b.split)) + "\n")


def write_corpus_jsonl(corpus: StyleCorpus, path, split: str | None = None) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for sent in corpus.sentences:
            fh.write(json.dumps(sentence_record(sent, split=split)) + "\n")


def read_corpus_jsonl(path, style_id: str) -> StyleCorpus:
    sents = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                sents.append(Sentence(tuple(rec["tokens"]), raw=rec.get("text", "")))
    if not sents:
        raise EmptyCorpusError(f"{path}: empty corpus file")
    return StyleCorpus(sents, style_id)


def read_scored_jsonl(path) -> list[tuple[Sentence, float]]:
    """Load externally scored sentences ({"text", "score"} per line).

    Lines whose text fails cleaning are skipped; ``tokens`` is used when present.
    """
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            score = float(rec["score"])
            if not (0.0 <= score <= 1.0):
                raise ContractViolation(f"{path}:{lineno}: score {score} outside [0, 1]")
            if rec.get("tokens"):
                sent = Sentence(tuple(rec["tokens"]), raw=rec.get("text", ""))
            else:
                sent = clean_sentence(rec["text"])
                if sent is None:
                    continue
            out.append((sent, score))
    return out
