"""Synthesis of supervised pairs for the tagger and generator.

Marker spans are found by a greedy left-to-right longest match. Tagged
sentences use ordinal positional tags: the j-th tag in a sentence is
``[TAG]_j``, clamped to the last reserved tag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Sentence, StyleCorpus, is_tag
from .markers import MarkerSet
from .tokenizer import DEFAULT_TAG_BUDGET, tag_token

MODES = ("replace", "add", "generator")
REPLACE_ALL = math.inf


@dataclass(frozen=True)
class AttributeSpan:
    start: int
    end: int
    phrase: tuple[str, ...]
    p: float


@dataclass
class TaggedSentence:
    tokens: list[str]
    tag_positions: list[tuple[int, AttributeSpan | None]] = field(default_factory=list)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    @property
    def n_tags(self) -> int:
        return sum(map(is_tag, self.tokens))

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "TaggedSentence":
        tags = [int(t[6:]) for t in tokens if is_tag(t)]
        return cls(list(tokens), [(t, None) for t in tags])


@dataclass
class ParallelPair:
    input: list[str]
    output: list[str]
    mode: str
    spans: list[AttributeSpan] = field(default_factory=list, compare=False)
    source: tuple[str, ...] = field(default=(), compare=False)


def match_markers(s: Sentence | Sequence[str], markers: MarkerSet) -> list[AttributeSpan]:
    tokens = tuple(s.tokens if isinstance(s, Sentence) else s)
    max_n = markers.max_n
    spans = []
    i = 0
    while i < len(tokens):
        for n in range(min(max_n, len(tokens) - i), 0, -1):
            w = tokens[i:i + n]
            p = markers.phrases.get(w)
            if p is not None:
                spans.append(AttributeSpan(i, i + n, w, p))
                i += n
                break
        else:
            i += 1
    return spans


def tag_spans(tokens: Sequence[str], spans: Sequence[AttributeSpan],
              tag_budget: int = DEFAULT_TAG_BUDGET) -> TaggedSentence:
    """Replace each span by the next ordinal tag; other tokens copied."""
    out: list[str] = []
    positions = []
    i = 0
    for j, sp in enumerate(sorted(spans, key=lambda s: s.start)):
        out.extend(tokens[i:sp.start])
        t = min(j, tag_budget - 1)
        out.append(tag_token(t))
        positions.append((t, sp))
        i = sp.end
    out.extend(tokens[i:])
    return TaggedSentence(out, positions)


def delete_spans(tokens: Sequence[str], spans: Sequence[AttributeSpan]) -> list[str]:
    out: list[str] = []
    i = 0
    for sp in sorted(spans, key=lambda s: s.start):
        out.extend(tokens[i:sp.start])
        i = sp.end
    out.extend(tokens[i:])
    return out


def fill_tags(tagged: Sequence[str], spans: Sequence[AttributeSpan]) -> list[str]:
    """Substitute the k-th tag token by the k-th span's phrase."""
    spans = sorted(spans, key=lambda s: s.start)
    out: list[str] = []
    k = 0
    for tok in tagged:
        if is_tag(tok):
            if k == len(spans):
                raise ValueError(f"more tags than the {len(spans)} spans given")
            out.extend(spans[k].phrase)
            k += 1
        else:
            out.append(tok)
    if k != len(spans):
        raise ValueError(f"{k} tags for {len(spans)} spans")
    return out


def strip_tags(tokens: Iterable[str]) -> list[str]:
    return [t for t in tokens if not is_tag(t)]


def _sentences(x) -> list[Sentence]:
    return list(x.sentences if isinstance(x, StyleCorpus) else x)


def make_replace_pairs(X1, markers: MarkerSet, sample_prob_scale: float = REPLACE_ALL,
                       seed: int = 0, tag_budget: int = DEFAULT_TAG_BUDGET) -> list[ParallelPair]:
    """Source sentence -> source sentence with markers swapped for tags.

    With a finite ``sample_prob_scale`` each matched span is replaced
    independently with probability ``min(1, scale * p / max_p)``; the default
    replaces every match.
    """
    rng = np.random.default_rng(seed)
    max_p = markers.max_p
    pairs = []
    for s in _sentences(X1):
        spans = match_markers(s, markers) if markers.phrases else []
        if math.isfinite(sample_prob_scale) and spans:
            probs = [min(1.0, sample_prob_scale * sp.p / max_p) for sp in spans]
            draws = rng.random(len(spans))
            spans = [sp for sp, q, u in zip(spans, probs, draws) if u < q]
        z = tag_spans(s.tokens, spans, tag_budget)
        pairs.append(ParallelPair(list(s.tokens), z.tokens, "replace", spans, s.tokens))
    return pairs


def make_add_pairs(X2, markers: MarkerSet,
                   tag_budget: int = DEFAULT_TAG_BUDGET) -> list[ParallelPair]:
    """Target sentence without its markers -> target sentence with markers as tags.

    Sentences without any marker are skipped.
    """
    pairs = []
    for s in _sentences(X2):
        spans = match_markers(s, markers) if markers.phrases else []
        if not spans:
            continue
        z = tag_spans(s.tokens, spans, tag_budget)
        pairs.append(ParallelPair(delete_spans(s.tokens, spans), z.tokens, "add", spans, s.tokens))
    return pairs


def make_generator_pairs(Xv, markers: MarkerSet,
                         tag_budget: int = DEFAULT_TAG_BUDGET) -> list[ParallelPair]:
    pairs = []
    for s in _sentences(Xv):
        spans = match_markers(s, markers) if markers.phrases else []
        z = tag_spans(s.tokens, spans, tag_budget)
        pairs.append(ParallelPair(z.tokens, list(s.tokens), "generator", spans, s.tokens))
    return pairs


def make_combined_pairs(add: Sequence[ParallelPair], replace: Sequence[ParallelPair],
                        seed: int = 0) -> list[ParallelPair]:
    pairs = list(add) + list(replace)
    order = np.random.default_rng(seed).permutation(len(pairs))
    return [pairs[i] for i in order]


# -- TSV --------------------------------------------------------------------

def write_pairs_tsv(pairs: Iterable[ParallelPair], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for pr in pairs:
            fh.write(f"{' '.join(pr.input)}\t{' '.join(pr.output)}\t{pr.mode}\n")


def read_pairs_tsv(path) -> list[ParallelPair]:
    pairs = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in MODES:
                raise ValueError(f"{path}:{lineno}: expected 'input<TAB>output<TAB>mode'")
            pairs.append(ParallelPair(parts[0].split(), parts[1].split(), parts[2]))
    return pairs
