"""Style attribute marker mining from a pair of non-parallel corpora.

For every n-gram present in both corpora, the relative impact toward the
second corpus is the ratio of its mean tf-idf in ``X2`` to its mean tf-idf in
``X1``. Ratios are smoothed with an exponent ``gamma`` and normalized into a
distribution; the highest-ranked n-grams form the marker set.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Sentence, StyleCorpus, EmptyCorpusError

Ngram = tuple[str, ...]

DEFAULT_GAMMA = 0.75
DEFAULT_K = 0.9
DEFAULT_N_RANGE = (1, 4)


@dataclass(frozen=True)
class NgramStats:
    ngram: Ngram
    mean_tfidf_1: float
    mean_tfidf_2: float
    eta: float
    p: float
    gamma: float

    @property
    def phrase(self) -> str:
        return " ".join(self.ngram)


@dataclass
class MarkerSet:
    style_id: str
    k: float
    phrases: dict[Ngram, float]
    etas: dict[Ngram, float] = field(default_factory=dict)
    warning: str | None = None

    def __len__(self):
        return len(self.phrases)

    def __contains__(self, ngram) -> bool:
        return tuple(ngram) in self.phrases

    @property
    def max_n(self) -> int:
        return max((len(w) for w in self.phrases), default=0)

    @property
    def max_p(self) -> float:
        return max(self.phrases.values(), default=0.0)

    def ranked(self) -> list[tuple[Ngram, float]]:
        return sorted(self.phrases.items(), key=lambda kv: (-kv[1], kv[0]))


def sentence_ngrams(tokens: Sequence[str], n_range: tuple[int, int]) -> Counter:
    lo, hi = n_range
    return Counter(tuple(tokens[i:i + n]) for n in range(lo, hi + 1)
                   for i in range(len(tokens) - n + 1))


def document_frequencies(sentences: Iterable[Sentence], n_range) -> tuple[Counter, int]:
    df: Counter = Counter()
    D = 0
    for s in sentences:
        df.update(sentence_ngrams(s.tokens, n_range).keys())
        D += 1
    return df, D


def idf(df_w: int, D: int) -> float:
    return math.log(D / (1 + df_w)) + 1.0


def tfidf(w: Sequence[str], s: Sentence, df: Mapping[Ngram, int], D: int) -> float:
    w = tuple(w)
    n = len(w)
    toks = s.tokens
    count = sum(1 for i in range(len(toks) - n + 1) if toks[i:i + n] == w)
    if count == 0:
        return 0.0
    return count * idf(df.get(w, 0), D)


def _corpus_sentences(x) -> list[Sentence]:
    return list(x.sentences if isinstance(x, StyleCorpus) else x)


def style_impact(X1, X2, n_range: tuple[int, int] = DEFAULT_N_RANGE,
                 gamma: float = DEFAULT_GAMMA) -> list[NgramStats]:
    """Impact of each shared n-gram toward the style of ``X2``.

    Returns stats sorted by ``p`` descending (ties by n-gram). N-grams seen in
    only one corpus are dropped; an empty list means nothing is shared.
    """
    s1, s2 = _corpus_sentences(X1), _corpus_sentences(X2)
    if not s1 or not s2:
        raise EmptyCorpusError("style_impact needs two non-empty corpora")
    if not gamma > 0:
        raise ValueError("gamma must be positive")

    counts1 = [sentence_ngrams(s.tokens, n_range) for s in s1]
    counts2 = [sentence_ngrams(s.tokens, n_range) for s in s2]
    df: Counter = Counter()
    for c in counts1 + counts2:
        df.update(c.keys())
    D = len(counts1) + len(counts2)

    tf1: Counter = Counter()
    tf2: Counter = Counter()
    for c in counts1:
        tf1.update(c)
    for c in counts2:
        tf2.update(c)

    n, m = len(s1), len(s2)
    rows = []
    for w in tf1.keys() & tf2.keys():
        weight = idf(df[w], D)
        mean1 = tf1[w] * weight / n
        mean2 = tf2[w] * weight / m
        rows.append((w, mean1, mean2, mean2 / mean1))
    if not rows:
        return []

    # normalize in log space so large ratios cannot overflow
    logs = [gamma * math.log(eta) for *_, eta in rows]
    top = max(logs)
    total = math.fsum(math.exp(v - top) for v in logs)
    stats = [
        NgramStats(w, m1, m2, eta, math.exp(lv - top) / total, gamma)
        for (w, m1, m2, eta), lv in zip(rows, logs)
    ]
    stats.sort(key=lambda st: (-st.p, st.ngram))
    return stats


def extract_markers(stats: Sequence[NgramStats], k: float = DEFAULT_K,
                    style_id: str = "target") -> MarkerSet:
    """Keep the top ``1 - k`` fraction of the p-ranking (ties at the cut kept).

    ``k = 0`` keeps every shared n-gram, ``k >= 1`` keeps none. Member
    probabilities are renormalized to sum to one.
    """
    ranked = sorted(stats, key=lambda st: (-st.p, st.ngram))
    n_keep = math.ceil(round((1.0 - k) * len(ranked), 9)) if k < 1 else 0
    n_keep = max(0, min(n_keep, len(ranked)))
    if n_keep:
        cut = ranked[n_keep - 1].p
        chosen = [st for st in ranked if st.p >= cut]
    else:
        chosen = []

    warning = None
    if not chosen:
        warning = f"no markers selected for style {style_id!r} at k={k}"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
        return MarkerSet(style_id, k, {}, {}, warning)
    total = math.fsum(st.p for st in chosen)
    return MarkerSet(
        style_id,
        k,
        {st.ngram: st.p / total for st in chosen},
        {st.ngram: st.eta for st in chosen},
        warning,
    )


def mine_markers(X_source, X_target, n_range=DEFAULT_N_RANGE, gamma=DEFAULT_GAMMA,
                 k=DEFAULT_K, source_id="source", target_id="target"):
    """Both marker sets: (markers of the source style, markers of the target style)."""
    to_target = style_impact(X_source, X_target, n_range, gamma)
    to_source = style_impact(X_target, X_source, n_range, gamma)
    return (extract_markers(to_source, k, source_id),
            extract_markers(to_target, k, target_id))


# -- TSV --------------------------------------------------------------------

def write_markers_tsv(markers: MarkerSet, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for w, p in markers.ranked():
            eta = markers.etas.get(w, float("nan"))
            fh.write(f"{' '.join(w)}\t{eta!r}\t{p!r}\n")


def write_stats_tsv(stats: Sequence[NgramStats], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for st in stats:
            fh.write(f"{st.phrase}\t{st.eta!r}\t{st.p!r}\n")


def read_markers_tsv(path, style_id: str = "target", k: float = float("nan")) -> MarkerSet:
    """Load a (possibly hand-edited) marker TSV and renormalize its p column.

    Blank lines and lines starting with ``#`` are ignored; a missing eta
    column is allowed.
    """
    phrases: dict[Ngram, float] = {}
    etas: dict[Ngram, float] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) == 2:
                phrase, eta, p = parts[0], "nan", parts[1]
            elif len(parts) == 3:
                phrase, eta, p = parts
            else:
                raise ValueError(f"{path}:{lineno}: expected 'phrase<TAB>eta<TAB>p'")
            w = tuple(phrase.split())
            if not w:
                raise ValueError(f"{path}:{lineno}: empty phrase")
            p = float(p)
            if p < 0 or not math.isfinite(p):
                raise ValueError(f"{path}:{lineno}: invalid p {p}")
            phrases[w] = p
            etas[w] = float(eta)
    total = math.fsum(phrases.values())
    if total > 0:
        phrases = {w: p / total for w, p in phrases.items()}
    return MarkerSet(style_id, k, phrases, etas, None if phrases else "empty marker file")
