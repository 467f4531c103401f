"""One-pass token-passing decoder over a lexicon prefix tree.

Score of a hypothesis ``w1 .. wn`` with a given state segmentation::

    acoustic log-likelihood of every frame
    + log(self-loop) per repeated frame, log(forward) per state left
    + log(0.5) at each of the n + 1 word junctions (silence taken or skipped)
    + lm_weight * ln P(w1 .. wn </s>)
    + word_insertion_penalty * n

The LM is applied when a word ends; there is no look-ahead. Optional
silence may appear before, between and after words.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .context import (CdConfig, HmmTopology, TriContext, UnitGraph, UtteranceGraph,
                      expand_contexts, expand_unit_graph, project)
from .errors import NoHypothesis
from .lm import BOS, EOS, NGramLm
from .tree import SIL_ID, TiedStateMap
from .units import SIL_UNIT, Lexicon, Unit

log = logging.getLogger(__name__)

LOG_HALF = math.log(0.5)


@dataclass(frozen=True)
class DecodeConfig:
    beam: float = 40.0
    max_active: int = 5000
    lm_weight: float = 1.0
    word_insertion_penalty: float = 0.0
    junction_log_prob: float = LOG_HALF
    allow_partial: bool = True

    def __post_init__(self):
        if not self.beam > 0:
            raise ValueError("beam must be positive")
        if self.max_active < 1:
            raise ValueError("max_active must be at least 1")


@dataclass
class PrefixTree:
    """Lexicon prefix tree over tied states.

    Every node except the roots is one tied state. With within-word
    contexts there is a single root (node 0) and a word ends on the node of
    its last state. With cross-word contexts there is one root per possible
    left context (the last unit of the previous word, or ``None`` after
    silence), and a word ends on a leaf that also fixes the first unit of
    the next word (``right``; ``None`` means silence or the utterance end).
    """

    tied: list = field(default_factory=lambda: [-1])
    children: list = field(default_factory=lambda: [{}])
    words: list = field(default_factory=lambda: [[]])
    unit: list = field(default_factory=lambda: [None])
    right: list = field(default_factory=lambda: [None])
    roots: dict = field(default_factory=lambda: {None: 0})
    cross_word: bool = False

    def _new(self, tid, unit, right=None):
        self.tied.append(tid)
        self.children.append({})
        self.words.append([])
        self.unit.append(unit)
        self.right.append(right)
        return len(self.tied) - 1

    def root(self, left):
        if left not in self.roots:
            self.roots[left] = self._new(-1, None)
        return self.roots[left]

    def add(self, ids, word, units=None, root=0, right=None, end_key=None):
        """Insert a pronunciation given as a tied-state sequence.

        ``end_key`` makes the last state a separate leaf keyed by it (the
        cross-word case, where the last state depends on ``right``).
        """
        units = units if units is not None else [None] * len(ids)
        node = root
        last = len(ids) - 1
        for i, (tid, u) in enumerate(zip(ids, units)):
            key = end_key if (i == last and end_key is not None) else tid
            nxt = self.children[node].get(key)
            if nxt is None:
                nxt = self._new(tid, u, right if key is end_key else None)
                self.children[node][key] = nxt
            node = nxt
        if word not in self.words[node]:
            self.words[node].append(word)
            self.words[node].sort()
        return node

    @property
    def num_nodes(self):
        return len(self.tied)

    def terminals(self):
        return [i for i, w in enumerate(self.words) if w]

    def paths(self, root=0):
        """Tied-state sequence and words of every terminal below ``root``."""
        out = []
        stack = [(root, ())]
        while stack:
            node, prefix = stack.pop()
            if self.words[node]:
                out.append((prefix, list(self.words[node])))
            for child in sorted(self.children[node].values(), reverse=True):
                stack.append((child, prefix + (self.tied[child],)))
        return out


def build_prefix_tree(lexicon: Lexicon, tied_map: TiedStateMap,
                      config: CdConfig = CdConfig()) -> PrefixTree:
    if not len(lexicon):
        raise ValueError("lexicon is empty")
    if not (config.cross_word_context and config.context_dependent):
        tree = PrefixTree()
        for word, pron in lexicon.pronunciations():
            ctxs = expand_contexts(pron, config)
            tree.add([tied_map.tie(c) for c in ctxs], word, [c.center for c in ctxs])
        return tree

    prons = [(w, project(p, config)) for w, p in lexicon.pronunciations()]
    lefts = [None] + sorted({p[-1] for _, p in prons}, key=Unit.sort_key)
    rights = [None] + sorted({p[0] for _, p in prons}, key=Unit.sort_key)
    tree = PrefixTree(cross_word=True)
    for left in lefts:
        root = tree.root(left)
        for word, units in prons:
            ctxs = expand_contexts(units, config)
            ids = [tied_map.tie(c) for c in ctxs]
            first = ctxs[0]
            ids[0] = tied_map.tie(TriContext(left, first.center, first.right))
            for right in rights:
                last = ctxs[-1]
                lctx = left if len(units) == 1 else last.left
                tid = tied_map.tie(TriContext(lctx, last.center, right))
                end_key = ("end", tid, right)
                tree.add(ids[:-1] + [tid], word, units, root, right, end_key)
    return tree


@dataclass
class DecodeResult:
    words: list
    score: float
    lm_score: float = 0.0
    num_frames: int = 0
    partial: bool = False

    def __iter__(self):
        return iter((self.words, self.score))


def _trace_words(trace):
    out = []
    while trace is not None:
        out.append(trace[0])
        trace = trace[1]
    out.reverse()
    return out


def _better(score, trace, old):
    if score > old[0]:
        return True
    if score < old[0]:
        return False
    return _trace_words(trace) < _trace_words(old[1])


def decode(features, model, tree: PrefixTree, lm: NGramLm,
           config: DecodeConfig = DecodeConfig()) -> DecodeResult:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.dim:
        raise ValueError(f"features must be T x {model.dim}")
    T = len(features)
    if T == 0:
        raise NoHypothesis("no frames")
    col = {int(pid): j for j, pid in enumerate(model._ids)}
    emis = model.log_likelihoods(features)
    sil_col = col[SIL_ID]
    topo = model.topology
    ln_self, ln_fwd = topo.log_self_loop, topo.log_forward
    ln_junc = config.junction_log_prob
    lmw, wip = config.lm_weight, config.word_insertion_penalty

    vocab = lm.vocabulary - {BOS, EOS}
    node_words = [[w for w in ws if w in vocab] for ws in tree.words]
    # drop subtrees that cannot end in a decodable word
    alive = [False] * tree.num_nodes
    for node in reversed(range(tree.num_nodes)):
        alive[node] = bool(node_words[node]) or any(alive[c] for c in tree.children[node].values())
    kids = [sorted((c for c in ch.values() if alive[c]), key=lambda c: (tree.tied[c], c))
            for ch in tree.children]
    node_col = [col[t] if t >= 0 else -1 for t in tree.tied]
    starts = kids[tree.roots[None]]
    if not starts:
        raise NoHypothesis("no lexicon word is in the LM vocabulary")
    # where a word exit may go without silence in between
    if tree.cross_word:
        entry = {}
        for left, root in tree.roots.items():
            for c in kids[root]:
                entry.setdefault((left, tree.unit[c]), []).append(c)
        follow = [entry.get((tree.unit[n], tree.right[n]), []) if tree.right[n] is not None
                  else [] for n in range(tree.num_nodes)]
        can_pause = [tree.right[n] is None for n in range(tree.num_nodes)]
    else:
        follow = [starts] * tree.num_nodes
        can_pause = [True] * tree.num_nodes
    lm_cache = {}

    def lm_score(word, hist):
        key = (word, hist)
        if key not in lm_cache:
            lm_cache[key] = lm.log_prob(word, hist)
        return lm_cache[key]

    h0 = lm.start_history()
    # key: (node, history, started); node -1 is silence
    tokens = {}

    def relax(store, key, score, trace):
        old = store.get(key)
        if old is None or _better(score, trace, old):
            store[key] = (score, trace)

    relax(tokens, (-1, h0, 0), ln_junc, None)
    for c in starts:
        relax(tokens, (c, h0, 0), ln_junc, None)
    tokens = _prune(_emit(tokens, emis[0], node_col, sil_col), config)

    for t in range(1, T):
        new = {}
        for key, (score, trace) in tokens.items():
            node, hist, started = key
            relax(new, key, score + ln_self, trace)
            if node == -1:
                for c in starts:
                    relax(new, (c, hist, 0), score + ln_fwd, trace)
                continue
            for c in kids[node]:
                relax(new, (c, hist, 0), score + ln_fwd, trace)
            for w in node_words[node]:
                lp = lm_score(w, hist)
                if lp == -math.inf:
                    continue
                exit_score = score + ln_fwd + lmw * lp + wip + ln_junc
                h2 = lm.advance(hist, w)
                tr2 = (w, trace)
                if can_pause[node]:
                    relax(new, (-1, h2, 1), exit_score, tr2)
                for c in follow[node]:
                    relax(new, (c, h2, 0), exit_score, tr2)
        if not new:
            raise NoHypothesis(f"all tokens pruned at frame {t}")
        tokens = _emit(new, emis[t], node_col, sil_col)
        if t + 1 < T:
            tokens = _prune(tokens, config)

    has_eos = EOS in lm.vocabulary
    best = None
    for key, (score, trace) in tokens.items():
        node, hist, started = key
        if node == -1:
            if not started:
                continue
            final = score + ln_fwd + (lmw * lm_score(EOS, hist) if has_eos else 0.0)
            cand = (final, trace)
        else:
            if not can_pause[node]:
                continue
            cand = None
            for w in node_words[node]:
                lp = lm_score(w, hist)
                h2 = lm.advance(hist, w)
                final = score + ln_fwd + lmw * lp + wip + ln_junc
                if has_eos:
                    final += lmw * lm_score(EOS, h2)
                c2 = (final, (w, trace))
                if cand is None or _better(c2[0], c2[1], cand):
                    cand = c2
            if cand is None:
                continue
        if cand[0] == -math.inf:
            continue
        if best is None or _better(cand[0], cand[1], best):
            best = cand
    partial = best is None
    if partial:
        if not config.allow_partial:
            raise NoHypothesis("no token reached a word end")
        # best surviving token; its unfinished word is dropped
        for score, trace in tokens.values():
            if best is None or _better(score, trace, best):
                best = (score, trace)
        log.warning("no token reached the end state; returning a partial hypothesis")
    words = _trace_words(best[1])
    return DecodeResult(words, float(best[0]), lm.sentence_log_prob(words), T, partial)


def _emit(tokens, frame_ll, node_col, sil_col):
    out = {}
    for key, (score, trace) in tokens.items():
        node = key[0]
        out[key] = (score + frame_ll[sil_col if node == -1 else node_col[node]], trace)
    return out


def _prune(tokens, config):
    if not tokens:
        return tokens
    best = max(s for s, _ in tokens.values())
    if math.isinf(config.beam):
        kept = {k: v for k, v in tokens.items() if v[0] > -math.inf}
    else:
        floor = best - config.beam
        kept = {k: v for k, v in tokens.items() if v[0] >= floor}
    if len(kept) > config.max_active:
        order = sorted(kept.items(), key=lambda kv: (-kv[1][0], kv[0]))
        kept = dict(order[:config.max_active])
    return kept


def hypothesis_graph(words, lexicon: Lexicon, config: CdConfig,
                     topology: HmmTopology = HmmTopology(),
                     junction_log_prob: float = LOG_HALF) -> UtteranceGraph:
    """The decoder's search space restricted to one word sequence.

    Aligning features against this graph gives the acoustic plus
    transition part of the decoder's score for ``words``.
    """
    g = UnitGraph()
    lead = g.add(SIL_UNIT, -1)
    g.link(g.START, lead, junction_log_prob)
    # (node, log weight) pairs that can move into the next word
    entries = [(g.START, junction_log_prob), (lead, 0.0)]
    for i, w in enumerate(words):
        exits = []
        for pron in lexicon[w]:
            nodes = [g.add(u, i) for u in pron]
            for src, lw in entries:
                g.link(src, nodes[0], lw)
            for a, b in zip(nodes, nodes[1:]):
                g.link(a, b, 0.0)
            exits.append(nodes[-1])
        sil = g.add(SIL_UNIT, -1)
        for e in exits:
            g.link(e, sil, junction_log_prob)
        entries = [(e, junction_log_prob) for e in exits] + [(sil, 0.0)]
    for src, lw in entries:
        if src != g.START:
            g.link(src, g.FINAL, lw)
    return expand_unit_graph(g, config, topology, words)


def write_hypotheses(path, hyps):
    Path(path).write_text("".join(f"{u}\t{' '.join(w)}\n" for u, w in hyps.items()),
                          encoding="utf-8")
