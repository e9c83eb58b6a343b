"""Synthetic corpora for smoke runs and directional checks.

Every corpus is drawn from a small hand-written grammar, so the style signal
is known exactly: styled sentences are neutral action requests with a
courtesy phrase attached at the start and/or the end. A few courtesy-only
lines are mixed into the opposite corpus so the phrases are shared between
corpora, which marker mining requires.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

VERBS = ["send", "forward", "review", "update", "check", "fix", "upload", "print",
         "sign", "file", "share", "revise", "finish", "schedule", "cancel", "book",
         "order", "prepare", "submit", "scan"]
DETERMINERS = ["the", "this", "that", "our", "my"]
ADJECTIVES = ["new", "weekly", "final", "latest", "draft", "quarterly", "updated", "signed"]
OBJECTS = ["report", "invoice", "contract", "slides", "budget", "calendar", "proposal",
           "agenda", "memo", "spreadsheet", "notes", "form", "ticket", "receipt", "plan"]
RECIPIENTS = ["to the team", "to finance", "to legal", "to marketing", "to the client",
              "to the manager", "to hr", "for the board", "for the auditors"]
TIMES = ["today", "tomorrow", "by friday", "by noon", "before the meeting", "before lunch",
         "this afternoon", "by monday", "tonight", "next week", "by the end of the day",
         "first thing tomorrow"]

# (phrase, weight); start phrases precede the verb, end phrases precede the period
POLITE_START = [("please", 0.55), ("could you please", 0.12), ("can you please", 0.1),
                ("would you kindly", 0.08), ("kindly", 0.08), ("if possible ,", 0.07)]
POLITE_END = [(", thanks", 0.6), (", thank you", 0.25), (", much appreciated", 0.15)]

# two disjoint lexicons with mirrored frequencies
FORMAL_START = [("kindly", 0.6), ("would you kindly", 0.4)]
FORMAL_END = [(", regards", 0.6), (", with gratitude", 0.4)]
CASUAL_START = [("hey", 0.6), ("hey there buddy", 0.4)]
CASUAL_END = [(", cheers", 0.6), (", thx mate", 0.4)]

FOOD = ["the food", "the pasta", "the pizza", "the soup", "the coffee", "the dessert",
        "the salad", "the burger"]
STAFF = ["the staff", "the waiter", "the service", "the host", "the bartender"]
POS_ADJ = ["good", "tasty", "fresh", "nice", "friendly", "quick", "warm", "decent"]
NEG_ADJ = ["bland", "cold", "stale", "slow", "rude", "greasy", "soggy", "mediocre"]
POS_VERDICT = "but overall it was perfect"
NEG_VERDICT = "but overall it sucked"


def _pick(rng, options):
    return options[int(rng.integers(len(options)))]


def _pick_weighted(rng, table):
    phrases = [p for p, _ in table]
    w = np.array([w for _, w in table], dtype=float)
    return phrases[int(rng.choice(len(phrases), p=w / w.sum()))]


def _content(rng) -> list[str]:
    words = [_pick(rng, VERBS), _pick(rng, DETERMINERS)]
    if rng.random() < 0.8:
        words.append(_pick(rng, ADJECTIVES))
    words += [_pick(rng, OBJECTS), _pick(rng, RECIPIENTS), _pick(rng, TIMES)]
    return words


def _decorate(content, start=None, end=None) -> str:
    words = ([start] if start else []) + content + ([end] if end else [])
    return " ".join(words) + " ."


def _unique(rng, make, n):
    seen, out = set(), []
    while len(out) < n:
        line = make(rng)
        if line not in seen:
            seen.add(line)
            out.append(line)
    return out


def _courtesy_only(rng, start_table, end_table) -> str:
    # at least three words so the line survives cleaning
    while True:
        line = _pick_weighted(rng, start_table) + " " + _pick_weighted(rng, end_table).lstrip(", ")
        if len(line.split()) >= 3:
            return line + " ."


def _styled(rng, start_table, end_table, p_start=0.7, p_end=0.2) -> str:
    u = rng.random()
    content = _content(rng)
    if u < p_start:
        return _decorate(content, start=_pick_weighted(rng, start_table))
    if u < p_start + p_end:
        return _decorate(content, end=_pick_weighted(rng, end_table))
    return _decorate(content, _pick_weighted(rng, start_table), _pick_weighted(rng, end_table))


def _mix(rng, lines, noise):
    lines = lines + noise
    order = rng.permutation(len(lines))
    return [lines[i] for i in order]


def politeness_corpus(n_neutral=1000, n_polite=1000, seed=0, noise_frac=0.03, plain_frac=0.1):
    """(neutral lines, polite lines) as raw text.

    The polite side also holds a ``plain_frac`` share of undecorated
    requests, as a real target-style sample would.
    """
    rng = np.random.default_rng([seed, 1])
    n_noise = int(round(noise_frac * n_neutral))
    n_plain = int(round(plain_frac * n_polite))
    neutral = _unique(rng, lambda r: _decorate(_content(r)), n_neutral - n_noise)
    polite = _unique(rng, lambda r: _styled(r, POLITE_START, POLITE_END), n_polite - n_plain)
    noise = [_courtesy_only(rng, POLITE_START, POLITE_END) for _ in range(n_noise)]
    plain = [_decorate(_content(rng)) for _ in range(n_plain)]
    return _mix(rng, neutral, noise), _mix(rng, polite, plain)


def _mixed(rng, own_start, own_end, other_start, other_end) -> str:
    content = _content(rng)
    if rng.random() < 0.5:
        return _decorate(content, _pick_weighted(rng, other_start), _pick_weighted(rng, own_end))
    return _decorate(content, _pick_weighted(rng, own_start), _pick_weighted(rng, other_end))


def polar_corpus(n_each=1000, seed=0, noise_frac=0.15):
    """(formal lines, casual lines).

    Regular sentences carry exactly one phrase of their own lexicon; the
    noise lines carry one phrase from each lexicon.
    """
    rng = np.random.default_rng([seed, 2])
    n_noise = int(round(noise_frac * n_each))
    formal = _unique(rng, lambda r: _styled(r, FORMAL_START, FORMAL_END, 0.5, 0.5), n_each - n_noise)
    casual = _unique(rng, lambda r: _styled(r, CASUAL_START, CASUAL_END, 0.5, 0.5), n_each - n_noise)
    formal_noise = [_mixed(rng, FORMAL_START, FORMAL_END, CASUAL_START, CASUAL_END) for _ in range(n_noise)]
    casual_noise = [_mixed(rng, CASUAL_START, CASUAL_END, FORMAL_START, FORMAL_END) for _ in range(n_noise)]
    return _mix(rng, formal, formal_noise), _mix(rng, casual, casual_noise)


def _review(rng, own, other, verdict, p_own=0.55, p_verdict=0.03) -> str:
    def adj():
        return _pick(rng, own if rng.random() < p_own else other)

    words = [_pick(rng, FOOD), "was", adj(), "and", _pick(rng, STAFF), "was", adj()]
    if rng.random() < p_verdict:
        words.append(verdict)
    return " ".join(words) + " ."


def review_corpus(n_each=1000, seed=0):
    """(negative lines, positive lines) with weakly skewed adjectives and rare verdict clauses."""
    rng = np.random.default_rng([seed, 3])
    neg = _unique(rng, lambda r: _review(r, NEG_ADJ, POS_ADJ, NEG_VERDICT), n_each)
    pos = _unique(rng, lambda r: _review(r, POS_ADJ, NEG_ADJ, POS_VERDICT), n_each)
    return neg, pos


TOY_KINDS = {
    "politeness": (politeness_corpus, ("neutral.txt", "polite.txt")),
    "polar": (polar_corpus, ("formal.txt", "casual.txt")),
    "review": (review_corpus, ("negative.txt", "positive.txt")),
}


def write_toy(out_dir, kind="politeness", seed=0) -> tuple[Path, Path]:
    """Write a (source, target) pair of corpus files; returns their paths."""
    make, names = TOY_KINDS[kind]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, lines in zip(names, make(seed=seed)):
        p = out / name
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths.append(p)
    return paths[0], paths[1]
