"""Backoff n-gram language models in ARPA format."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MalformedArpa, OrderMismatch

BOS = "<s>"
EOS = "</s>"
LN10 = math.log(10.0)
NO_PROB = -99.0


@dataclass
class NGramLm:
    order: int
    probs: dict
    backoffs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vocabulary = frozenset(k[0] for k in self.probs if len(k) == 1)
        for key in self.probs:
            for w in key:
                if w not in self.vocabulary:
                    raise ValueError(f"n-gram {key} uses a word outside the unigrams")

    def log10_prob(self, word, history=()):
        """Backoff log10 P(word | history)."""
        if word not in self.vocabulary:
            return -math.inf
        history = tuple(history)[-(self.order - 1):] if self.order > 1 else ()
        penalty = 0.0
        while True:
            key = history + (word,)
            if key in self.probs:
                return penalty + self.probs[key]
            if not history:
                return -math.inf
            penalty += self.backoffs.get(history, 0.0)
            history = history[1:]

    def log_prob(self, word, history=()):
        """Natural-log probability."""
        return self.log10_prob(word, history) * LN10

    def start_history(self):
        return (BOS,) if self.order > 1 and BOS in self.vocabulary else ()

    def advance(self, history, word):
        if self.order == 1:
            return ()
        return (tuple(history) + (word,))[-(self.order - 1):]

    def sentence_log_prob(self, words):
        """Natural-log probability of a sentence including ``</s>``."""
        h = self.start_history()
        total = 0.0
        for w in words:
            total += self.log_prob(w, h)
            h = self.advance(h, w)
        if EOS in self.vocabulary:
            total += self.log_prob(EOS, h)
        return total

    def to_text(self):
        by_order = {}
        for key in self.probs:
            by_order.setdefault(len(key), []).append(key)
        out = ["", "\\data\\"]
        for n in range(1, self.order + 1):
            out.append(f"ngram {n}={len(by_order.get(n, []))}")
        for n in range(1, self.order + 1):
            out += ["", f"\\{n}-grams:"]
            for key in sorted(by_order.get(n, [])):
                line = f"{self.probs[key]:.7f}\t{' '.join(key)}"
                if n < self.order and key in self.backoffs:
                    line += f"\t{self.backoffs[key]:.7f}"
                out.append(line)
        out += ["", "\\end\\", ""]
        return "\n".join(out)

    def write(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")


def load_arpa(path) -> NGramLm:
    text = Path(path).read_text(encoding="utf-8")
    return parse_arpa(text)


def parse_arpa(text) -> NGramLm:
    lines = text.splitlines()
    counts = {}
    probs = {}
    backoffs = {}
    section = None
    seen = Counter()
    in_data = False
    ended = False
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        if line == "\\data\\":
            in_data, section = True, None
            continue
        if line == "\\end\\":
            ended = True
            break
        if line.startswith("\\") and line.endswith("-grams:"):
            try:
                section = int(line[1:-len("-grams:")])
            except ValueError:
                raise MalformedArpa(lineno, line) from None
            if section not in counts:
                raise OrderMismatch(f"section {section}-grams not declared in header")
            in_data = False
            continue
        if in_data:
            if not line.startswith("ngram ") or "=" not in line:
                raise MalformedArpa(lineno, line)
            n, _, c = line[6:].partition("=")
            try:
                counts[int(n)] = int(c)
            except ValueError:
                raise MalformedArpa(lineno, line) from None
            continue
        if section is None:
            raise MalformedArpa(lineno, line)
        parts = line.split()
        if len(parts) not in (section + 1, section + 2):
            raise MalformedArpa(lineno, line)
        try:
            prob = float(parts[0])
            bo = float(parts[section + 1]) if len(parts) == section + 2 else None
        except ValueError:
            raise MalformedArpa(lineno, line) from None
        key = tuple(parts[1:section + 1])
        probs[key] = prob
        if bo is not None:
            backoffs[key] = bo
        seen[section] += 1
    if not counts:
        raise MalformedArpa(0, "no \\data\\ header")
    if not ended:
        raise MalformedArpa(len(lines), "missing \\end\\")
    for n, c in counts.items():
        if seen[n] != c:
            raise OrderMismatch(f"{n}-grams: header says {c}, found {seen[n]}")
    order = max(counts)
    if sorted(counts) != list(range(1, order + 1)):
        raise OrderMismatch("n-gram orders are not contiguous")
    try:
        return NGramLm(order, probs, backoffs)
    except ValueError as err:
        raise MalformedArpa(0, str(err)) from None


def train_ngram(sentences, order=2, discount=0.5, vocabulary=None) -> NGramLm:
    """Absolute-discounting backoff LM with an add-one unigram floor."""
    if order < 1:
        raise ValueError("order must be >= 1")
    vocab = set(vocabulary or ())
    counts = [Counter() for _ in range(order + 1)]
    for sent in sentences:
        toks = [BOS] + list(sent) + [EOS]
        vocab.update(sent)
        # predicted position i >= 1: <s> is only ever history
        for i in range(1, len(toks)):
            for n in range(1, min(order, i + 1) + 1):
                counts[n][tuple(toks[i - n + 1:i + 1])] += 1
    vocab.add(EOS)
    total = sum(counts[1].values())
    denom = total + len(vocab)
    probs = {(w,): math.log10((counts[1][(w,)] + 1) / denom) for w in sorted(vocab)}
    if order > 1:
        probs[(BOS,)] = NO_PROB
    backoffs = {}
    lm = NGramLm(1, dict(probs))
    for n in range(2, order + 1):
        ctx_totals = Counter()
        for key, c in counts[n].items():
            ctx_totals[key[:-1]] += c
        listed = {}
        for key, c in counts[n].items():
            p = (c - discount) / ctx_totals[key[:-1]]
            if p > 0:
                listed[key] = p
        by_ctx = {}
        for key, p in listed.items():
            by_ctx.setdefault(key[:-1], []).append((key[-1], p))
        for ctx, items in by_ctx.items():
            mass = sum(p for _, p in items)
            lower = sum(10 ** lm.log10_prob(w, ctx[1:]) for w, _ in items)
            if 1.0 - lower < 1e-9:
                # every successor was seen: nothing to back off to
                for w, p in items:
                    listed[ctx + (w,)] = p / mass
                backoffs[ctx] = 0.0
            else:
                backoffs[ctx] = math.log10((1.0 - mass) / (1.0 - lower))
        for key, p in listed.items():
            probs[key] = math.log10(p)
        lm = NGramLm(n, dict(probs), dict(backoffs))
    return lm
