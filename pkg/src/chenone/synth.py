"""Synthetic corpora with known acoustic truth.

Every grapheme realization owns a Gaussian. By default a realization is
keyed by the grapheme and its position (word boundary or internal); units
listed in ``context_units`` additionally switch realization depending on
whether their right neighbour is a vowel. Frames are sampled along an
HMM path with geometric state durations, so the expected number of frames
per state is ``1 / (1 - self_loop)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .am import Utterance
from .context import CdConfig, TriContext, expand_contexts
from .errors import FormatError
from .evaluate import TagLabel, TagSpan, write_tags, write_text
from .features import write_features
from .lm import train_ngram
from .units import SIL_UNIT, CaseMode, Lexicon, Position, UnitInventory, build_lexicon

VOWELS = frozenset("aeiouAEIOU")
ALI_HEADER = "CFALI v1"

DEFAULT_WORDS = (
    "hello", "world", "Michael's", "Ritz-Carlton", "DNN", "naive", "Saint",
    "Paul", "Jean", "Valjean", "the", "cat", "sat", "on", "mat", "read",
    "data", "model", "speech", "graph",
)


@dataclass
class SyntheticSpec:
    words: Sequence[str] = DEFAULT_WORDS
    num_utterances: int = 100
    seed: int = 0
    dim: int = 6
    mean_scale: float = 3.0
    noise: float = 1.0
    min_words: int = 2
    max_words: int = 5
    sil_prob: float = 0.5
    self_loop: float = 0.5
    zipf: float = 1.0
    context_units: frozenset = frozenset()
    position_units: Optional[frozenset] = None
    test_fraction: float = 0.2
    # (key, target_key, distance): place realization ``key`` at ``distance``
    # from ``target_key`` in a random direction
    near: tuple = ()

    def realization(self, ctx):
        """Key of the generating Gaussian behind a full-context unit."""
        u = ctx.center
        if u.is_special:
            return (u.symbol,)
        pos = u.position
        if self.position_units is not None and u.symbol not in self.position_units:
            pos = Position.INTERNAL
        cls = ""
        if u.symbol in self.context_units:
            cls = "v" if ctx.right is not None and ctx.right.symbol in VOWELS else "c"
        return (u.symbol, pos.value, cls)


ABLATION_WORDS = ("to", "tu", "tote", "tute", "tai", "tei", "tate", "tete")


def ablation_spec(seed=0, num_utterances=300, near_distance=4.5) -> SyntheticSpec:
    """A corpus where context and word position each decide between words.

    "a" before a vowel sounds close to "e", so "tai" and "tei" are told
    apart only by a model that keys "a" on its right neighbour. A
    word-final "o" sounds close to "u", so "to" and "tu" are told apart only
    by a model that separates final from internal "o" ("tote"). Every word
    starts with "t", so without position tags the contexts of a final "o"
    followed by a word and of the internal "o" in "tote" coincide.
    """
    return SyntheticSpec(
        words=ABLATION_WORDS, num_utterances=num_utterances, seed=seed, dim=12,
        mean_scale=4.0, context_units=frozenset("a"), position_units=frozenset("o"),
        zipf=0.0, sil_prob=0.2, test_fraction=0.4,
        near=((("a", "internal", "v"), ("e", "internal", ""), near_distance),
              (("o", "wb", ""), ("u", "internal", ""), near_distance)))


@dataclass
class SyntheticCorpus:
    utterances: list
    lexicon: Lexicon
    means: dict
    alignments: dict = field(default_factory=dict)
    tags: list = field(default_factory=list)


def _word_probs(n, zipf):
    p = 1.0 / np.arange(1, n + 1) ** zipf
    return p / p.sum()


def generate(spec: SyntheticSpec) -> SyntheticCorpus:
    inventory = UnitInventory.graphemic(CaseMode.PRESERVE)
    lexicon = build_lexicon(list(spec.words), inventory)
    words = lexicon.words
    truth_cfg = CdConfig(True, True, False)
    keys = {("SIL",)}
    for _, pron in lexicon.pronunciations():
        for ctx in expand_contexts(pron, truth_cfg):
            keys.add(spec.realization(ctx))
    mean_rng = np.random.default_rng([spec.seed, 1])
    means = {}
    for key in sorted(keys):
        means[key] = mean_rng.normal(0.0, spec.mean_scale, spec.dim)
    for key, target, dist in spec.near:
        if key not in means or target not in means:
            raise ValueError(f"near: {key} or {target} is not a realization of this lexicon")
        direction = mean_rng.normal(size=spec.dim)
        means[key] = means[target] + dist * direction / np.linalg.norm(direction)
    rng = np.random.default_rng([spec.seed, 2])
    probs = _word_probs(len(words), spec.zipf)
    utts, alis, tags = [], {}, []
    width = max(4, len(str(max(spec.num_utterances - 1, 0))))
    sil_ctx = expand_contexts([SIL_UNIT], truth_cfg)[0]
    for n in range(spec.num_utterances):
        utt_id = f"utt{n:0{width}d}"
        k = int(rng.integers(spec.min_words, spec.max_words + 1))
        seq = [words[i] for i in rng.choice(len(words), size=k, p=probs)]
        path = [sil_ctx]
        for i, w in enumerate(seq):
            path += expand_contexts(lexicon[w][0], truth_cfg)
            if i + 1 < len(seq) and rng.random() < spec.sil_prob:
                path.append(sil_ctx)
        path.append(sil_ctx)
        durs = rng.geometric(1.0 - spec.self_loop, size=len(path))
        frames, segs, t = [], [], 0
        for ctx, d in zip(path, durs):
            mu = means[spec.realization(ctx)]
            frames.append(mu + spec.noise * rng.standard_normal((int(d), spec.dim)))
            segs.append((t, t + int(d) - 1, ctx))
            t += int(d)
        feats = np.concatenate(frames).astype(np.float32).astype(np.float64)
        utts.append(Utterance(utt_id, seq, feats))
        alis[utt_id] = segs
        tags += proper_noun_spans(utt_id, seq)
    return SyntheticCorpus(utts, lexicon, means, alis, tags)


def proper_noun_spans(utt_id, words):
    """Runs of capitalized (not all-caps) words form one proper-noun span."""
    spans = []
    start = None
    for i, w in enumerate(list(words) + [""]):
        cap = bool(w) and w[0].isupper() and not w.isupper()
        if cap and start is None:
            start = i
        elif not cap and start is not None:
            spans.append(TagSpan(utt_id, start, i - 1, TagLabel.PROPER_NOUN))
            start = None
    return spans


def split_corpus(corpus: SyntheticCorpus, test_fraction):
    n_test = int(round(len(corpus.utterances) * test_fraction))
    n_train = len(corpus.utterances) - n_test
    return corpus.utterances[:n_train], corpus.utterances[n_train:]


def write_alignments(path, segments_by_utt):
    """Ground-truth or forced alignments as ``utt start end tied l c r`` lines."""
    lines = [ALI_HEADER + "\n"]
    for utt, segs in segments_by_utt.items():
        for start, end, ctx, *rest in segs:
            tid = rest[0] if rest else -1
            lines.append(f"{utt} {start} {end} {tid} {ctx}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def segments_from_result(result):
    """Collapse a frame-level alignment into ``(start, end, ctx, tied)`` runs
    of one state."""
    segs = []
    for t, (state, (tid, ctx)) in enumerate(zip(result.states, result.frame_labels)):
        if segs and segs[-1][4] == state:
            segs[-1][1] = t
        else:
            segs.append([t, t, ctx, tid, state])
    return [tuple(s[:4]) for s in segs]


def read_alignments(path, inventory):
    """Parse an alignment file into ``{utt: [(start, end, ctx, tied), ...]}``."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != ALI_HEADER:
        raise FormatError(f"{path}: missing {ALI_HEADER} header")
    out = {}
    for lineno, raw in enumerate(lines[1:], 2):
        parts = raw.split()
        if not parts:
            continue
        if len(parts) != 7:
            raise FormatError(f"{path} line {lineno}: expected 7 fields")
        try:
            start, end, tid = int(parts[1]), int(parts[2]), int(parts[3])
            ctx = TriContext.parse(parts[4:7], inventory)
        except (ValueError, KeyError):
            raise FormatError(f"{path} line {lineno}: bad field") from None
        if end < start:
            raise FormatError(f"{path} line {lineno}: segment ends before it starts")
        out.setdefault(parts[0], []).append((start, end, ctx, tid))
    return out


def write_corpus_dir(out, utterances, tags=(), alignments=None):
    out = Path(out)
    (out / "feats").mkdir(parents=True, exist_ok=True)
    write_text(out / "text", {u.utt_id: u.words for u in utterances})
    scp = []
    for u in utterances:
        rel = f"feats/{u.utt_id}.cfea"
        write_features(out / rel, u.features)
        scp.append(f"{u.utt_id}\t{rel}\n")
    (out / "feats.scp").write_text("".join(scp), encoding="utf-8")
    ids = {u.utt_id for u in utterances}
    write_tags(out / "tags", [s for s in tags if s.utt_id in ids])
    if alignments is not None:
        write_alignments(out / "ali.truth", {k: v for k, v in alignments.items() if k in ids})


def write_synthetic(spec: SyntheticSpec, out_dir, lm_order=2):
    """Write train/ and test/ corpora, the word list and an ARPA LM trained
    on the training transcripts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = generate(spec)
    train, test = split_corpus(corpus, spec.test_fraction)
    write_corpus_dir(out / "train", train, corpus.tags, corpus.alignments)
    write_corpus_dir(out / "test", test, corpus.tags, corpus.alignments)
    (out / "words.txt").write_text("".join(w + "\n" for w in corpus.lexicon.words),
                                   encoding="utf-8")
    lm = train_ngram([u.words for u in train], order=lm_order, vocabulary=corpus.lexicon.words)
    lm.write(out / "lm.arpa")
    return corpus
