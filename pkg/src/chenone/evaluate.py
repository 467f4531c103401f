"""Word and character error rates, and error rates restricted to tagged
reference segments (proper nouns, rare words)."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

from .errors import EmptyReference, EmptySegments, FormatError, InvalidSpan

MATCH, SUB, DEL, INS = "C", "S", "D", "I"


class EditOp(NamedTuple):
    kind: str
    ref: Optional[int]
    hyp: Optional[int]


def align_words(ref: Sequence, hyp: Sequence) -> list:
    """Minimum edit alignment with unit S/D/I costs.

    On equal cost the backtrace prefers a substitution (or match), then a
    deletion, then an insertion.
    """
    m = len(hyp)
    prev = list(range(m + 1))
    rows = [prev]
    i = 0
    for ri in ref:
        i += 1
        left = i
        row = [i]
        append = row.append
        for hj, diag, up in zip(hyp, prev, prev[1:]):
            if ri != hj:
                diag += 1
            if up < diag:
                diag = up + 1
            if left < diag:
                diag = left + 1
            append(diag)
            left = diag
        rows.append(row)
        prev = row
    # backtrace from the end; this loop is hot in exhaustive checks
    ops = []
    add = ops.append
    i, j = len(ref), m
    cur = rows[i]
    while i and j:
        up = rows[i - 1]
        c = cur[j]
        if ref[i - 1] == hyp[j - 1]:
            if c == up[j - 1]:
                i -= 1
                j -= 1
                add(EditOp(MATCH, i, j))
                cur = up
                continue
        elif c == up[j - 1] + 1:
            i -= 1
            j -= 1
            add(EditOp(SUB, i, j))
            cur = up
            continue
        if c == up[j] + 1:
            i -= 1
            add(EditOp(DEL, i, None))
            cur = up
        else:
            j -= 1
            add(EditOp(INS, None, j))
    while i:
        i -= 1
        add(EditOp(DEL, i, None))
    while j:
        j -= 1
        add(EditOp(INS, None, j))
    ops.reverse()
    return ops


def edit_cost(ops):
    return sum(1 for op in ops if op.kind != MATCH)


@dataclass
class WerReport:
    substitutions: int
    deletions: int
    insertions: int
    ref_words: int

    @property
    def errors(self):
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self):
        return 100.0 * self.errors / self.ref_words

    def __str__(self):
        return (f"wer={self.wer:.1f} sub={self.substitutions} "
                f"del={self.deletions} ins={self.insertions} ref={self.ref_words}")


def count_ops(ops):
    s = sum(op.kind == SUB for op in ops)
    dl = sum(op.kind == DEL for op in ops)
    ins = sum(op.kind == INS for op in ops)
    n = sum(op.ref is not None for op in ops)
    return s, dl, ins, n


def wer(alignments) -> WerReport:
    """Aggregate S/D/I over a corpus of alignments."""
    s = d = i = n = 0
    for ops in alignments:
        a, b, c, r = count_ops(ops)
        s, d, i, n = s + a, d + b, i + c, n + r
    if n == 0:
        raise EmptyReference("corpus has no reference words")
    return WerReport(s, d, i, n)


class TagLabel(enum.Enum):
    PROPER_NOUN = "ProperNoun"
    RARE_WORD = "RareWord"


@dataclass(frozen=True)
class TagSpan:
    utt_id: str
    start: int
    end: int
    label: TagLabel


@dataclass(frozen=True)
class SegmentPair:
    ref: str
    hyp: str


def hyp_positions_by_ref(ops):
    """Map every reference index to the hypothesis indices attached to it.

    Matched and substituted words attach to their reference word; an
    inserted word attaches to the closest reference word before it.
    Insertions ahead of the first reference word attach to nothing.
    """
    owner = {}
    last_ref = None
    for op in ops:
        if op.ref is not None:
            last_ref = op.ref
            owner.setdefault(op.ref, [])
            if op.hyp is not None:
                owner[op.ref].append(op.hyp)
        elif last_ref is not None:
            owner[last_ref].append(op.hyp)
    return owner


def extract_tagged_segments(ref, hyp, alignment, tags) -> list:
    owner = hyp_positions_by_ref(alignment)
    out = []
    for span in tags:
        if not (0 <= span.start <= span.end < len(ref)):
            raise InvalidSpan(f"{span} outside reference of length {len(ref)}")
        idx = sorted(j for i in range(span.start, span.end + 1) for j in owner.get(i, ()))
        out.append(SegmentPair(" ".join(ref[span.start:span.end + 1]),
                               " ".join(hyp[j] for j in idx)))
    return out


def char_errors(pair: SegmentPair, count_spaces=True):
    r, h = pair.ref, pair.hyp
    if not count_spaces:
        r, h = r.replace(" ", ""), h.replace(" ", "")
    return edit_cost(align_words(r, h)), len(r)


def cer(segments, count_spaces=True) -> float:
    errors = total = 0
    for pair in segments:
        e, n = char_errors(pair, count_spaces)
        errors += e
        total += n
    if total == 0:
        raise EmptySegments("no reference characters to score")
    return 100.0 * errors / total


def select_rare_words(train_counts: dict, threshold: float = 0.8,
                      by_type: bool = True) -> set:
    """Least frequent words whose cumulative share stays within ``threshold``.

    Words are sorted by ascending count, ties lexicographically. The share
    is over distinct words by default, or over tokens with ``by_type=False``.
    """
    if not train_counts:
        raise ValueError("empty count table")
    order = sorted(train_counts.items(), key=lambda kv: (kv[1], kv[0]))
    total = len(order) if by_type else sum(train_counts.values())
    chosen = set()
    cum = 0
    for word, c in order:
        step = 1 if by_type else c
        if (cum + step) > threshold * total + 1e-12 * total:
            break
        cum += step
        chosen.add(word)
    return chosen


def rare_word_spans(utt_id, ref, rare):
    return [TagSpan(utt_id, i, i, TagLabel.RARE_WORD) for i, w in enumerate(ref) if w in rare]


def read_text(path):
    """``utt_id<TAB>words`` lines into an ordered dict of word lists."""
    out = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if not raw.strip():
            continue
        utt, _, text = raw.partition("\t")
        out[utt.strip()] = text.split()
    return out


def write_text(path, texts):
    Path(path).write_text("".join(f"{u}\t{' '.join(w)}\n" for u, w in texts.items()),
                          encoding="utf-8")


def read_tags(path):
    spans = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) != 4:
            raise FormatError(f"tag line {lineno}: expected 4 tab-separated fields")
        try:
            spans.append(TagSpan(parts[0], int(parts[1]), int(parts[2]), TagLabel(parts[3])))
        except ValueError:
            raise FormatError(f"tag line {lineno}: bad field") from None
    return spans


def write_tags(path, spans):
    Path(path).write_text(
        "".join(f"{s.utt_id}\t{s.start}\t{s.end}\t{s.label.value}\n" for s in spans),
        encoding="utf-8")


@dataclass
class ScoreReport:
    wer: WerReport
    propernoun_cer: float | None = None
    rareword_cer: float | None = None

    def to_text(self):
        def fmt(x):
            return "nan" if x is None else f"{x:.2f}"
        w = self.wer
        return (f"wer={w.wer:.2f} sub={w.substitutions} del={w.deletions} "
                f"ins={w.insertions} ref={w.ref_words} "
                f"propernoun_cer={fmt(self.propernoun_cer)} "
                f"rareword_cer={fmt(self.rareword_cer)}\n")


def score_corpus(refs: dict, hyps: dict, tags=(), rare_words=None,
                 count_spaces=True) -> ScoreReport:
    """WER over ``refs`` plus CER over tagged and rare-word segments.

    Utterances missing from ``hyps`` count as empty hypotheses.
    """
    aligns = {}
    for utt, ref in refs.items():
        aligns[utt] = align_words(ref, hyps.get(utt, []))
    report = wer(aligns.values())
    by_label = {TagLabel.PROPER_NOUN: [], TagLabel.RARE_WORD: []}
    spans = {}
    for span in tags:
        spans.setdefault(span.utt_id, []).append(span)
    if rare_words is not None:
        for utt, ref in refs.items():
            spans.setdefault(utt, []).extend(rare_word_spans(utt, ref, rare_words))
    for utt, lst in spans.items():
        if utt not in refs:
            raise InvalidSpan(f"tag for unknown utterance {utt}")
        ref, hyp = refs[utt], hyps.get(utt, [])
        for label in by_label:
            chosen = sorted({(s.start, s.end) for s in lst if s.label is label})
            chosen = [TagSpan(utt, a, b, label) for a, b in chosen]
            by_label[label] += extract_tagged_segments(ref, hyp, aligns[utt], chosen)

    def maybe_cer(segs):
        return cer(segs, count_spaces) if segs else None

    return ScoreReport(report, maybe_cer(by_label[TagLabel.PROPER_NOUN]),
                       maybe_cer(by_label[TagLabel.RARE_WORD]))
