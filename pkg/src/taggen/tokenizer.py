"""Byte-pair encoding over lowercased word tokens.

Words are split into characters with an end-of-word marker glued to the
last one (``"ok" -> ["o", "k</w>"]``), and merges are learned greedily by
pair frequency, ties broken by the lexicographically smallest pair.
Positional ``[TAG]_t`` tokens and PAD/BOS/EOS/UNK are reserved ids that BPE
never touches.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import ContractViolation, Sentence, StyleCorpus, canonical_tag

EOW = "</w>"
PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
BASE_SPECIALS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(4)
DEFAULT_TAG_BUDGET = 20
VOCAB_VERSION = 1


class ConfigError(ValueError):
    pass


def tag_token(t: int) -> str:
    return f"[TAG]_{t}"


class BpeVocab:
    def __init__(self, merges: Sequence[tuple[str, str]], alphabet: Sequence[str],
                 tag_budget: int = DEFAULT_TAG_BUDGET):
        if tag_budget < 1:
            raise ConfigError("tag_budget must be at least 1")
        self.merges = [tuple(m) for m in merges]
        self.alphabet = sorted(alphabet)
        self.tag_budget = tag_budget
        self.specials = list(BASE_SPECIALS) + [tag_token(t) for t in range(tag_budget)]

        self.id_to_token: list[str] = []
        self.token_to_id: dict[str, int] = {}
        for sym in self.specials + self.alphabet + ["".join(m) for m in self.merges]:
            if sym not in self.token_to_id:
                self.token_to_id[sym] = len(self.id_to_token)
                self.id_to_token.append(sym)
        self.merge_rank = {m: i for i, m in enumerate(self.merges)}
        self._cache: dict[str, tuple[int, ...]] = {}

    def __len__(self):
        return len(self.id_to_token)

    @property
    def n_specials(self) -> int:
        return len(self.specials)

    @property
    def tag_ids(self) -> range:
        return range(len(BASE_SPECIALS), len(BASE_SPECIALS) + self.tag_budget)

    def tag_id(self, t: int) -> int:
        return len(BASE_SPECIALS) + min(t, self.tag_budget - 1)

    def is_tag_id(self, i: int) -> bool:
        return len(BASE_SPECIALS) <= i < len(BASE_SPECIALS) + self.tag_budget

    def to_dict(self) -> dict:
        return {
            "version": VOCAB_VERSION,
            "merges": [list(m) for m in self.merges],
            "alphabet": self.alphabet,
            "specials": {"pad": PAD, "bos": BOS, "eos": EOS, "unk": UNK,
                         "tag_budget": self.tag_budget},
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "BpeVocab":
        if d.get("version") != VOCAB_VERSION:
            raise ConfigError(f"unsupported vocab version {d.get('version')!r}")
        return cls([tuple(m) for m in d["merges"]], d["alphabet"], d["specials"]["tag_budget"])

    @classmethod
    def load(cls, path) -> "BpeVocab":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def segment_word(self, word: str) -> list[str]:
        """BPE symbols for one word, merges applied in training order."""
        symbols = list(word[:-1]) + [word[-1] + EOW]
        while len(symbols) > 1:
            ranked = [(self.merge_rank.get(p, len(self.merges)), i)
                      for i, p in enumerate(zip(symbols, symbols[1:]))]
            rank, _ = min(ranked)
            if rank == len(self.merges):
                break
            pair = self.merges[rank]
            merged, i = [], 0
            while i < len(symbols):
                if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == pair:
                    merged.append(symbols[i] + symbols[i + 1])
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        return symbols

    def encode_word(self, word: str) -> tuple[int, ...]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        tag = canonical_tag(word)
        if tag is not None:
            ids = (self.tag_id(int(tag[6:])),)
        else:
            ids = tuple(self.token_to_id.get(sym, UNK_ID) for sym in self.segment_word(word))
        self._cache[word] = ids
        return ids


def _word_symbols(word: str) -> tuple[str, ...]:
    return tuple(word[:-1]) + (word[-1] + EOW,)


def train_bpe(corpus: StyleCorpus | Iterable[Sentence], vocab_size: int,
              tag_budget: int = DEFAULT_TAG_BUDGET) -> BpeVocab:
    """Learn merges until ``vocab_size`` ids exist or no pair occurs twice."""
    sentences = corpus.sentences if isinstance(corpus, StyleCorpus) else list(corpus)
    if not sentences:
        raise ConfigError("cannot train BPE on an empty corpus")
    word_freq = Counter(tok for s in sentences for tok in s.tokens if canonical_tag(tok) is None)

    alphabet = set()
    for w in word_freq:
        for ch in w:
            alphabet.add(ch)
            alphabet.add(ch + EOW)
    n_fixed = len(BASE_SPECIALS) + tag_budget + len(alphabet)
    if vocab_size < n_fixed:
        raise ConfigError(f"vocab_size={vocab_size} is below the {n_fixed} ids needed "
                          f"for specials and base characters")

    words = [list(_word_symbols(w)) for w in word_freq]
    freqs = list(word_freq.values())
    pair_counts: Counter[tuple[str, str]] = Counter()
    where: dict[tuple[str, str], set[int]] = defaultdict(set)
    for wi, syms in enumerate(words):
        for p in zip(syms, syms[1:]):
            pair_counts[p] += freqs[wi]
            where[p].add(wi)
    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    reserved = set(BASE_SPECIALS) | {tag_token(t) for t in range(tag_budget)}
    symbols = set(alphabet)
    merges: list[tuple[str, str]] = []
    size = n_fixed
    while size < vocab_size and heap:
        neg, pair = heapq.heappop(heap)
        if pair_counts.get(pair, 0) != -neg:
            continue  # stale heap entry
        if -neg < 2:
            break
        new_sym = pair[0] + pair[1]
        if new_sym in reserved:
            pair_counts[pair] = 0
            continue
        merges.append(pair)
        if new_sym not in symbols:
            symbols.add(new_sym)
            size += 1

        touched = set()
        for wi in sorted(where.pop(pair, ())):
            syms, f = words[wi], freqs[wi]
            for p in zip(syms, syms[1:]):
                pair_counts[p] -= f
                touched.add(p)
            merged, i = [], 0
            while i < len(syms):
                if i + 1 < len(syms) and syms[i] == pair[0] and syms[i + 1] == pair[1]:
                    merged.append(new_sym)
                    i += 2
                else:
                    merged.append(syms[i])
                    i += 1
            words[wi] = merged
            for p in zip(merged, merged[1:]):
                pair_counts[p] += f
                where[p].add(wi)
                touched.add(p)
        for p in touched:
            c = pair_counts[p]
            if c > 0:
                heapq.heappush(heap, (-c, p))
            else:
                del pair_counts[p]
                where.pop(p, None)

    return BpeVocab(merges, sorted(alphabet), tag_budget)


def encode(vocab: BpeVocab, s: Sentence | Sequence[str]) -> list[int]:
    tokens = s.tokens if isinstance(s, Sentence) else s
    ids: list[int] = []
    for tok in tokens:
        ids.extend(vocab.encode_word(tok))
    return ids


def decode_tokens(vocab: BpeVocab, ids: Iterable[int]) -> list[str]:
    words: list[str] = []
    current = ""
    n = len(vocab)
    for i in ids:
        i = int(i)
        if not 0 <= i < n:
            raise ContractViolation(f"token id {i} outside vocabulary of size {n}")
        if i in (PAD_ID, BOS_ID, EOS_ID):
            continue
        if vocab.is_tag_id(i):
            if current:
                words.append(current)
                current = ""
            words.append(vocab.id_to_token[i])
            continue
        sym = vocab.id_to_token[i]
        if sym.endswith(EOW):
            words.append(current + sym[: -len(EOW)])
            current = ""
        else:
            current += sym
    if current:
        words.append(current)
    return words


def decode(vocab: BpeVocab, ids: Iterable[int]) -> str:
    return " ".join(decode_tokens(vocab, ids))
