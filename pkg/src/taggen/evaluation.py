"""Automatic evaluation: transfer accuracy, BLEU, ROUGE-L, METEOR-lite and audits.

BLEU is corpus-level; ROUGE-L and METEOR-lite are sentence means. All three
are reported on a 0-100 scale.
"""

from __future__ import annotations

import difflib
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .classifier import NgramClassifier, transfer_accuracy
from .corpus import Sentence, is_tag

Tokens = Sequence[str]

NEGATIVE_SUFFIX = ("but", "overall", "it", "sucked")
POSITIVE_SUFFIX = ("but", "overall", "it", "was", "perfect")

AGGREGATION = {"bleu": "corpus", "rouge_l": "sentence-mean", "meteor_lite": "sentence-mean"}


def _toks(x) -> list[str]:
    if isinstance(x, Sentence):
        return list(x.tokens)
    if isinstance(x, str):
        return x.split()
    return list(x)


def _ref_lists(refs) -> list[list[str]]:
    """Accept one reference (string / token list) or a list of them."""
    if isinstance(refs, (str, Sentence)):
        return [_toks(refs)]
    refs = list(refs)
    if refs and all(isinstance(r, str) for r in refs):
        # a bare token list is a single reference
        return [refs] if not any(" " in r for r in refs) else [r.split() for r in refs]
    return [_toks(r) for r in refs]


def _check_lengths(a, b, what="references"):
    if not a:
        raise ValueError("need at least one candidate")
    if len(a) != len(b):
        raise ValueError(f"{len(a)} candidates but {len(b)} {what}")


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates, references_per_candidate, max_n: int = 4) -> float:
    """Corpus BLEU with uniform weights and brevity penalty.

    A zero match count for n >= 2 is smoothed to (0 + 1) / (total + 1); a zero
    unigram match count gives 0.
    """
    cands = [_toks(c) for c in candidates]
    refs = [_ref_lists(r) for r in references_per_candidate]
    _check_lengths(cands, refs)

    match = [0] * max_n
    total = [0] * max_n
    c_len = r_len = 0
    for c, rs in zip(cands, refs):
        c_len += len(c)
        r_len += min((abs(len(r) - len(c)), len(r)) for r in rs)[1]
        for n in range(1, max_n + 1):
            cc = _ngrams(c, n)
            best: Counter = Counter()
            for r in rs:
                best |= _ngrams(r, n)
            match[n - 1] += sum(min(k, best[g]) for g, k in cc.items())
            total[n - 1] += max(len(c) - n + 1, 0)

    if match[0] == 0:
        return 0.0
    logs = [math.log(match[0] / total[0])]
    for n in range(1, max_n):
        if match[n] == 0:
            logs.append(math.log(1.0 / (total[n] + 1)))
        else:
            logs.append(math.log(match[n] / total[n]))
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return 100.0 * bp * math.exp(sum(logs) / max_n)


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_sentence(c: Tokens, r: Tokens) -> float:
    lcs = lcs_length(c, r)
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(c), lcs / len(r)
    return 2 * p * rec / (p + rec)


def rouge_l(candidates, references) -> float:
    cands = [_toks(c) for c in candidates]
    refs = [_toks(r) for r in references]
    _check_lengths(cands, refs)
    return 100.0 * sum(rouge_l_sentence(c, r) for c, r in zip(cands, refs)) / len(cands)


_SUFFIXES = ("ing", "es", "ed", "ly", "s")


def stem(word: str) -> str:
    """Strip one of -ing/-es/-ed/-ly/-s, keeping at least three characters.

    A doubled final consonant left by -ing/-ed is undoubled (running -> run).
    """
    for suf in _SUFFIXES:
        if word.endswith(suf) and len(word) - len(suf) >= 3:
            base = word[: -len(suf)]
            if suf in ("ing", "ed") and base[-1] == base[-2] and base[-1] not in "aeiou":
                base = base[:-1]
            return base
    return word


def meteor_alignment(c: Tokens, r: Tokens) -> list[tuple[int, int]]:
    """Exact-match stage then stem stage; each candidate token takes the leftmost free reference slot."""
    pairs: dict[int, int] = {}
    used: set[int] = set()
    for key in (lambda w: w, stem):
        rkeys = [key(w) for w in r]
        for i, w in enumerate(c):
            if i in pairs:
                continue
            kw = key(w)
            for j, rk in enumerate(rkeys):
                if j not in used and rk == kw:
                    pairs[i] = j
                    used.add(j)
                    break
    return sorted(pairs.items())


def meteor_sentence(c: Tokens, r: Tokens) -> float:
    align = meteor_alignment(c, r)
    m = len(align)
    if m == 0:
        return 0.0
    p, rec = m / len(c), m / len(r)
    fmean = 10 * p * rec / (rec + 9 * p)
    chunks = 1 + sum(1 for (i1, j1), (i2, j2) in zip(align, align[1:])
                     if not (i2 == i1 + 1 and j2 == j1 + 1))
    if chunks == 1 and m == len(c) == len(r):
        penalty = 0.0
    else:
        penalty = 0.5 * (chunks / m) ** 3
    return fmean * (1 - penalty)


def meteor_lite(candidates, references) -> float:
    cands = [_toks(c) for c in candidates]
    refs = [_toks(r) for r in references]
    _check_lengths(cands, refs)
    return 100.0 * sum(meteor_sentence(c, r) for c, r in zip(cands, refs)) / len(cands)


def naive_baseline(s: Sentence | Tokens, target: int) -> Sentence:
    """Append a fixed sentiment clause: negative for target 0, positive for target 1."""
    if target not in (0, 1):
        raise ValueError("target must be 0 or 1")
    suffix = POSITIVE_SUFFIX if target == 1 else NEGATIVE_SUFFIX
    return Sentence(tuple(_toks(s)) + suffix)


def nontag_change_audit(sources, taggeds, outputs) -> float:
    """Fraction of sentences whose output lost a non-tag token of the tagged input."""
    if not (len(sources) == len(taggeds) == len(outputs)):
        raise ValueError("sources, taggeds and outputs must be aligned")
    if not outputs:
        raise ValueError("nothing to audit")
    changed = 0
    for z, out in zip(taggeds, outputs):
        kept = Counter(t for t in _toks(z.tokens if hasattr(z, "tokens") else z) if not is_tag(t))
        if kept - Counter(_toks(out)):
            changed += 1
    return changed / len(outputs)


@dataclass
class MetricReport:
    acc: float
    bleu_self: float
    rouge_l: float
    meteor_lite: float
    n: int
    bleu_ref: float | None = None
    nontag_change_frac: float | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def evaluate(sources, outputs, classifier: NgramClassifier, target_label: int = 1,
             references=None, taggeds=None) -> MetricReport:
    srcs = [_toks(s) for s in sources]
    outs = [_toks(o) for o in outputs]
    _check_lengths(outs, srcs, "sources")
    bleu_ref = None
    if references:
        bleu_ref = bleu(outs, references)
    nontag = None
    if taggeds is not None:
        nontag = nontag_change_audit(srcs, list(taggeds), outs)
    return MetricReport(
        acc=transfer_accuracy(classifier, outs, target_label),
        bleu_self=bleu(outs, [[s] for s in srcs]),
        rouge_l=rouge_l(outs, srcs),
        meteor_lite=meteor_lite(outs, srcs),
        n=len(outs),
        bleu_ref=bleu_ref,
        nontag_change_frac=nontag,
        metadata={"aggregation": AGGREGATION, "target_label": target_label},
    )


def format_table(reports: Mapping[str, MetricReport]) -> str:
    """Aligned plain-text table with Acc, BL-s, BL-r, MET, ROU columns."""
    cols = ["", "Acc", "BL-s", "BL-r", "MET", "ROU", "n"]
    rows = []
    for name, r in reports.items():
        rows.append([
            name,
            f"{100 * r.acc:.2f}",
            f"{r.bleu_self:.2f}",
            "-" if r.bleu_ref is None else f"{r.bleu_ref:.2f}",
            f"{r.meteor_lite:.2f}",
            f"{r.rouge_l:.2f}",
            str(r.n),
        ])
    widths = [max(len(x[i]) for x in [cols] + rows) for i in range(len(cols))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
             for row in [cols] + rows]
    return "\n".join(lines)


# -- ablations ----------------------------------------------------------------

def classify_operation(source: Tokens, tagged: Tokens) -> str:
    """'add', 'replace' or 'none' for one tagger output.

    Source tokens missing from the tagged sentence are grouped into removed
    segments; tags beyond the number of removed segments count as insertions.
    """
    source, tagged = list(source), list(tagged)
    n_tags = sum(map(is_tag, tagged))
    if n_tags == 0:
        return "none"
    plain = [t for t in tagged if not is_tag(t)]
    ops = difflib.SequenceMatcher(a=source, b=plain, autojunk=False).get_opcodes()
    removed = sum(1 for op, *_ in ops if op in ("delete", "replace"))
    return "add" if n_tags > removed else "replace"


def operation_mix(sources, taggeds) -> dict[str, float]:
    kinds = Counter(classify_operation(_toks(s), _toks(z.tokens if hasattr(z, "tokens") else z))
                    for s, z in zip(sources, taggeds))
    n = max(sum(kinds.values()), 1)
    return {k: kinds.get(k, 0) / n for k in ("add", "replace", "none")}


@dataclass
class AblationResult:
    reports: dict[str, MetricReport]
    operation_mix: dict[str, dict[str, float]]
    transfers: dict[str, list] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"reports": {k: v.to_dict() for k, v in self.reports.items()},
                "operation_mix": self.operation_mix}


def ablation_harness(taggers: Mapping, generator, vocab, sources, classifier: NgramClassifier,
                     target_label: int = 1, references=None, beam: int = 5) -> AblationResult:
    """Run transfer and evaluation for each trained tagger variant with a shared generator."""
    from .decode import transfer

    reports, mixes, transfers = {}, {}, {}
    srcs = [_toks(s) for s in sources]
    for name, tagger in taggers.items():
        results = [transfer(tagger, generator, s, vocab, beam) for s in srcs]
        reports[name] = evaluate(srcs, [r.output for r in results], classifier, target_label,
                                 references, [r.tagged for r in results])
        mixes[name] = operation_mix(srcs, [r.tagged for r in results])
        transfers[name] = results
    return AblationResult(reports, mixes, transfers)
