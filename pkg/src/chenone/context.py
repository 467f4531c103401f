"""Context expansion and forced-alignment graphs.

Every modeled unit becomes one HMM state with a fixed self-loop/forward
split. A state is labeled with its tri-context (left, center, right); the
left and right slots hold ``None`` where the context is cut off (word edge,
silence, CI mode).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import EmptyTranscript, FormatError
from .units import GARBAGE_UNIT, SIL_UNIT, Lexicon, Unit

BOUNDARY_TOKEN = "<eps>"


@dataclass(frozen=True)
class TriContext:
    left: Optional[Unit]
    center: Unit
    right: Optional[Unit]

    def __post_init__(self):
        if self.center is None:
            raise ValueError("the boundary sentinel cannot be a center unit")

    def __str__(self):
        return " ".join(_tok(u) for u in (self.left, self.center, self.right))

    def sort_key(self):
        return tuple(_tok(u) for u in (self.center, self.left, self.right))

    @classmethod
    def parse(cls, tokens, inventory):
        left, center, right = tokens
        return cls(_untok(left, inventory), inventory.parse(center),
                   _untok(right, inventory))


def _tok(unit):
    return BOUNDARY_TOKEN if unit is None else str(unit)


def _untok(token, inventory):
    return None if token == BOUNDARY_TOKEN else inventory.parse(token)


@dataclass(frozen=True)
class CdConfig:
    context_dependent: bool = True
    position_dependent: bool = True
    cross_word_context: bool = False


@dataclass(frozen=True)
class HmmTopology:
    states_per_unit: int = 1
    self_loop_prob: float = 0.5
    forward_prob: float = 0.5

    def __post_init__(self):
        if self.states_per_unit != 1:
            raise ValueError("only the 1-state topology is supported")
        if not (0.0 < self.self_loop_prob < 1.0):
            raise ValueError("self-loop probability must lie in (0, 1)")
        if abs(self.self_loop_prob + self.forward_prob - 1.0) > 1e-12:
            raise ValueError("self-loop and forward probabilities must sum to 1")

    @property
    def log_self_loop(self):
        return math.log(self.self_loop_prob)

    @property
    def log_forward(self):
        return math.log(self.forward_prob)


def project(units: Sequence[Unit], config: CdConfig):
    if config.position_dependent:
        return list(units)
    return [u.internal() for u in units]


def expand_contexts(units: Sequence[Unit], config: CdConfig) -> list:
    """One TriContext per unit of a contiguous unit sequence.

    The sequence is treated as adjacent units: pass a single pronunciation
    for within-word contexts. SIL and GARBAGE never act as context and
    always get sentinel contexts themselves.
    """
    units = project(units, config)
    out = []
    n = len(units)
    for i, u in enumerate(units):
        if u.is_special or not config.context_dependent:
            out.append(TriContext(None, u, None))
            continue
        left = units[i - 1] if i > 0 and not units[i - 1].is_special else None
        right = units[i + 1] if i + 1 < n and not units[i + 1].is_special else None
        out.append(TriContext(left, u, right))
    return out


def expand_utterance(words: Sequence[Sequence[Unit]], config: CdConfig) -> list:
    """Contexts for a sequence of pronunciations (silence as its own word)."""
    if config.cross_word_context:
        return expand_contexts([u for w in words for u in w], config)
    return [c for w in words for c in expand_contexts(w, config)]


@dataclass
class UtteranceGraph:
    """HMM state graph. Node 0 is the non-emitting start, the last node the
    non-emitting final; every other node is one emitting state."""

    labels: list
    arcs: list
    words: list = field(default_factory=list)

    @property
    def start(self):
        return 0

    @property
    def final(self):
        return len(self.labels) - 1

    @property
    def num_states(self):
        return len(self.labels)

    @property
    def emitting(self):
        return range(1, len(self.labels) - 1)

    def outgoing(self, node):
        return [(d, lp) for s, d, lp in self.arcs if s == node]

    def min_path_length(self):
        """Fewest emitting states on any start-to-final path."""
        succ = {}
        for s, d, _ in self.arcs:
            if s != d:
                succ.setdefault(s, []).append(d)
        dist = {self.start: 0}
        queue = deque([self.start])
        while queue:
            node = queue.popleft()
            for nxt in succ.get(node, ()):
                if nxt not in dist:
                    dist[nxt] = dist[node] + (nxt != self.final)
                    queue.append(nxt)
        if self.final not in dist:
            raise ValueError("final node unreachable")
        return dist[self.final]

    def to_text(self):
        lines = []
        for s, d, lp in self.arcs:
            label = "<final>" if d == self.final else str(self.labels[d])
            lines.append(f"{s} {d} {label.replace(' ', '/')} {lp:.17g}")
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_text(cls, text, inventory):
        arcs = []
        labels = {0: None}
        final = 0
        for lineno, raw in enumerate(text.splitlines(), 1):
            parts = raw.split()
            if len(parts) != 4:
                raise FormatError(f"graph line {lineno}: expected 4 fields")
            s, d = int(parts[0]), int(parts[1])
            if parts[2] == "<final>":
                final = d
                labels[d] = None
            else:
                labels[d] = TriContext.parse(parts[2].split("/"), inventory)
            arcs.append((s, d, float(parts[3])))
        return cls([labels.get(i) for i in range(final + 1)], arcs)


class UnitGraph:
    """Unit-level graph: one node per unit occurrence. Arcs carry the log
    weight of choosing that successor; ``word_of`` groups nodes into words
    (-1 for silence) so that within-word contexts stop at word edges."""

    START = -1
    FINAL = -2

    def __init__(self):
        self.units = []
        self.word_of = []
        self.succ = {}

    def add(self, unit, word_index):
        self.units.append(unit)
        self.word_of.append(word_index)
        return len(self.units) - 1

    def link(self, src, dst, logw):
        self.succ.setdefault(src, []).append((dst, logw))

    def links(self):
        for src in sorted(self.succ):
            for dst, lw in self.succ[src]:
                yield src, dst, lw


def _unit_graph(transcript, lexicon, sil_prob):
    g = UnitGraph()
    ln_sil, ln_skip = math.log(sil_prob), math.log(1.0 - sil_prob)
    sil = g.add(SIL_UNIT, -1)
    g.link(g.START, sil, 0.0)
    exits = [(sil, 0.0)]
    for i, word in enumerate(transcript):
        if lexicon is not None and word in lexicon:
            prons = lexicon[word]
        else:
            prons = [(GARBAGE_UNIT,)]
        ln_pron = -math.log(len(prons))
        new_exits = []
        for pron in prons:
            nodes = [g.add(u, i) for u in pron]
            for src, lw in exits:
                g.link(src, nodes[0], lw + ln_pron)
            for a, b in zip(nodes, nodes[1:]):
                g.link(a, b, 0.0)
            new_exits.append(nodes[-1])
        if i + 1 < len(transcript):
            opt = g.add(SIL_UNIT, -1)
            for node in new_exits:
                g.link(node, opt, ln_sil)
            exits = [(n, ln_skip) for n in new_exits] + [(opt, 0.0)]
        else:
            exits = [(n, 0.0) for n in new_exits]
    end = g.add(SIL_UNIT, -1)
    for src, lw in exits:
        g.link(src, end, lw)
    g.link(end, g.FINAL, 0.0)
    return g


def _label(g, pred, node, succ, config):
    """Tri-context of ``node`` given its neighbours in the unit graph."""
    center = g.units[node]
    if not config.position_dependent:
        center = center.internal()
    if center.is_special or not config.context_dependent:
        return TriContext(None, center, None)

    def neighbour(other):
        if other < 0:
            return None
        unit = g.units[other]
        if unit.is_special:
            return None
        if not config.cross_word_context and g.word_of[other] != g.word_of[node]:
            return None
        return unit if config.position_dependent else unit.internal()

    return TriContext(neighbour(pred), center, neighbour(succ))


def expand_unit_graph(g: UnitGraph, config: CdConfig, topology: HmmTopology,
                      words=()) -> UtteranceGraph:
    """HMM state graph of a unit graph under a context configuration.

    Every path keeps its total log weight: arc weights plus the topology's
    forward cost for each state left and self-loop cost for each repeat.
    """
    log_self = topology.log_self_loop
    log_fwd = topology.log_forward
    if not config.cross_word_context:
        return _expand_within(g, config, log_self, log_fwd, words)

    # cross-word contexts: one state per (predecessor, node, successor) window
    windows = {}
    labels = [None]

    def window(pred, node, succ):
        key = (pred, node, succ)
        if key not in windows:
            windows[key] = len(labels)
            labels.append(_label(g, pred, node, succ, config))
        return windows[key]

    arcs = []
    pending = deque()
    for n0, w0 in g.succ[g.START]:
        for s, ws in g.succ[n0]:
            arcs.append((0, window(g.START, n0, s), w0 + ws))
            pending.append((g.START, n0, s))
    done = set()
    final_arcs = []
    while pending:
        key = pending.popleft()
        if key in done:
            continue
        done.add(key)
        _, node, succ = key
        sid = windows[key]
        arcs.append((sid, sid, log_self))
        if succ == g.FINAL:
            final_arcs.append((sid, log_fwd))
            continue
        for s2, w2 in g.succ[succ]:
            nxt = (node, succ, s2)
            arcs.append((sid, window(*nxt), log_fwd + w2))
            pending.append(nxt)
    final = len(labels)
    labels.append(None)
    arcs += [(sid, final, lw) for sid, lw in final_arcs]
    arcs.sort(key=lambda a: (a[0], a[1]))
    return UtteranceGraph(labels, arcs, list(words))


def _expand_within(g, config, log_self, log_fwd, words):
    # one state per unit occurrence; contexts never leave the word
    preds = {}
    for src, dst, _ in g.links():
        preds.setdefault(dst, []).append(src)

    def same_word(nodes, node):
        # within a pronunciation the neighbour is unique
        for other in nodes:
            if other >= 0 and g.word_of[other] == g.word_of[node] >= 0:
                return other
        return -1

    labels = [None]
    for node in range(len(g.units)):
        pred = same_word(preds.get(node, ()), node)
        succ = same_word([s for s, _ in g.succ.get(node, ())], node)
        labels.append(_label(g, pred, node, succ, config))
    final = len(labels)
    labels.append(None)
    arcs = []
    for src, dst, lw in g.links():
        if src == g.START:
            arcs.append((0, dst + 1, lw))
        elif dst == g.FINAL:
            arcs.append((src + 1, final, log_fwd + lw))
        else:
            arcs.append((src + 1, dst + 1, log_fwd + lw))
    for node in range(len(g.units)):
        arcs.append((node + 1, node + 1, log_self))
    arcs.sort(key=lambda a: (a[0], a[1]))
    return UtteranceGraph(labels, arcs, list(words))


def build_alignment_graph(transcript: Sequence[str], lexicon: Optional[Lexicon],
                          config: CdConfig, topology: HmmTopology = HmmTopology(),
                          sil_prob: float = 0.5) -> UtteranceGraph:
    """Linear word chain with optional inter-word silence.

    Utterances start and end with a mandatory silence state. Words missing
    from the lexicon become a single GARBAGE state; multi-pronunciation
    words become parallel branches with equal weight.
    """
    if not transcript:
        raise EmptyTranscript("transcript has no words")
    if not 0.0 < sil_prob < 1.0:
        raise ValueError("sil_prob must lie in (0, 1)")
    g = _unit_graph(list(transcript), lexicon, sil_prob)
    return expand_unit_graph(g, config, topology, transcript)
