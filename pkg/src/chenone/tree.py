"""Decision-tree state tying.

Questions are derived from the data: base units are clustered bottom-up by
how much single-Gaussian likelihood is lost when their statistics are
pooled, and every cluster formed along the way becomes a set-membership
question on the left or right context slot. Trees are then grown greedily,
one split at a time across all roots, always taking the split with the
largest likelihood gain.

SIL and GARBAGE are never clustered; they own tied-state ids 0 and 1.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyStats,
    FormatError,
    MissingRoot,
    UnknownCenterUnit,
    ZeroCount,
)
from .stats import GaussStats, StatsTable
from .units import GARBAGE, SIL, Position, parse_unit_token

VAR_FLOOR = 1e-4
LOG_2PI = math.log(2.0 * math.pi)
HEADER = "CFTREE v1"

SIL_ID = 0
GARBAGE_ID = 1


class Slot(enum.Enum):
    LEFT = "Left"
    RIGHT = "Right"
    CENTER = "Center"
    POSITION = "Position"


_SLOT_ORDER = {Slot.LEFT: 0, Slot.RIGHT: 1, Slot.CENTER: 2, Slot.POSITION: 3}
WB_MEMBER = "WB"


@dataclass(frozen=True)
class Question:
    slot: Slot
    members: frozenset

    def __post_init__(self):
        if not self.members:
            raise ValueError("question member set must be nonempty")

    def key(self):
        return (_SLOT_ORDER[self.slot], tuple(sorted(self.members)))

    def answer(self, ctx):
        if self.slot is Slot.LEFT:
            return ctx.left is not None and ctx.left.symbol in self.members
        if self.slot is Slot.RIGHT:
            return ctx.right is not None and ctx.right.symbol in self.members
        if self.slot is Slot.CENTER:
            return ctx.center.symbol in self.members
        return ctx.center.position is Position.WB

    def __str__(self):
        return f"{self.slot.value} {','.join(sorted(self.members))}"


POSITION_QUESTION = Question(Slot.POSITION, frozenset([WB_MEMBER]))


@dataclass(frozen=True)
class TreeConfig:
    max_leaves: int = 100
    min_gain: float = 0.0
    min_count: float = 1.0
    share_wb_root: bool = False
    var_floor: float = VAR_FLOOR

    def __post_init__(self):
        if self.min_count < 1:
            raise ValueError("min_count must be at least 1")


def _loglik(count, sum_, sum_sq, var_floor=VAR_FLOOR):
    """Vectorized ML log-likelihood; rows with zero count score 0."""
    count = np.asarray(count, dtype=np.float64)
    safe = np.where(count > 0, count, 1.0)
    mean = sum_ / safe[..., None]
    var = np.maximum(sum_sq / safe[..., None] - mean * mean, var_floor)
    ll = -0.5 * count * np.sum(np.log(var) + LOG_2PI + 1.0, axis=-1)
    return np.where(count > 0, ll, 0.0)


def single_gauss_loglik(stats: GaussStats, var_floor: float = VAR_FLOOR) -> float:
    """Log-likelihood of the data behind ``stats`` under its own ML diagonal
    Gaussian, with variances floored before the log."""
    if stats.count <= 0:
        raise ZeroCount("statistics have zero count")
    return float(_loglik(stats.count, stats.sum, stats.sum_sq, var_floor))


def split_gain(parent: GaussStats, question: Question, node_rows: StatsTable,
               min_count: float = 1.0, var_floor: float = VAR_FLOOR) -> float:
    """``L(yes) + L(no) - L(parent)``, or ``-inf`` if a side is too small."""
    if not node_rows.rows:
        raise EmptyStats("node has no rows")
    yes = GaussStats.zeros(node_rows.dim)
    no = GaussStats.zeros(node_rows.dim)
    for ctx in node_rows.sorted_keys():
        if question.answer(ctx):
            yes = yes + node_rows[ctx]
        else:
            no = no + node_rows[ctx]
    if yes.count < min_count or no.count < min_count:
        return -math.inf
    return (single_gauss_loglik(yes, var_floor) + single_gauss_loglik(no, var_floor)
            - single_gauss_loglik(parent, var_floor))


def _modeled_rows(stats):
    return {c: s for c, s in stats.rows.items() if not c.center.is_special}


def cluster_units(stats: StatsTable, var_floor: float = VAR_FLOOR) -> list:
    """Agglomerative clustering of base center units.

    Returns the sets created by each merge, in merge order.
    """
    pooled = {}
    for ctx, st in _modeled_rows(stats).items():
        sym = ctx.center.symbol
        pooled[sym] = pooled[sym] + st if sym in pooled else st
    clusters = [(frozenset([s]), pooled[s]) for s in sorted(pooled)]
    cache = {c: single_gauss_loglik(st, var_floor) for c, st in clusters if st.count > 0}
    merges = []
    while len(clusters) > 1:
        best = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                (a, sa), (b, sb) = clusters[i], clusters[j]
                union = sa + sb
                loss = cache[a] + cache[b] - single_gauss_loglik(union, var_floor)
                key = (loss, tuple(sorted(a | b)))
                if best is None or key < best[0]:
                    best = (key, i, j, union)
        _, i, j, union = best
        merged = clusters[i][0] | clusters[j][0]
        cache[merged] = single_gauss_loglik(union, var_floor)
        clusters = [c for k, c in enumerate(clusters) if k not in (i, j)]
        clusters.append((merged, union))
        merges.append(merged)
    return merges


def generate_questions(stats: StatsTable, center_questions: bool = False,
                       var_floor: float = VAR_FLOOR) -> list:
    rows = _modeled_rows(stats)
    if not rows:
        raise EmptyStats("no modeled rows in statistics")
    symbols = set()
    for ctx in rows:
        symbols.add(ctx.center.symbol)
        for u in (ctx.left, ctx.right):
            if u is not None and not u.is_special:
                symbols.add(u.symbol)
    sets = [frozenset([s]) for s in sorted(symbols)]
    sets += cluster_units(stats, var_floor)
    slots = [Slot.LEFT, Slot.RIGHT] + ([Slot.CENTER] if center_questions else [])
    questions = {Question(slot, s) for slot in slots for s in sets}
    questions.add(POSITION_QUESTION)
    return sorted(questions, key=Question.key)


class TreeNode:
    __slots__ = ("question", "yes", "no", "gain", "leaf_id")

    def __init__(self, question=None, yes=None, no=None, gain=0.0, leaf_id=None):
        self.question = question
        self.yes = yes
        self.no = no
        self.gain = gain
        self.leaf_id = leaf_id

    @property
    def is_leaf(self):
        return self.question is None

    def leaves(self):
        if self.is_leaf:
            return [self]
        return self.yes.leaves() + self.no.leaves()

    def descend(self, ctx):
        node = self
        path = [node]
        while not node.is_leaf:
            node = node.yes if node.question.answer(ctx) else node.no
            path.append(node)
        return path


def root_key(center, shared):
    """Root group of a center unit: its symbol, plus position unless shared."""
    if center.is_special:
        return (center.symbol, None)
    return (center.symbol, None if shared else center.position)


def _root_name(key):
    sym, pos = key
    return sym + "_WB" if pos is Position.WB else sym


def _root_sort(key):
    sym, pos = key
    special = {SIL: 0, GARBAGE: 1}.get(sym, 2)
    return (special, sym, pos is Position.WB)


@dataclass
class TiedStateMap:
    roots: dict
    share_wb_root: bool = False
    splits: list = field(default_factory=list)

    @property
    def num_tied_states(self):
        return sum(len(r.leaves()) for r in self.roots.values())

    def root_for(self, center):
        key = root_key(center, self.share_wb_root)
        if key not in self.roots:
            raise UnknownCenterUnit(f"no tree root for center unit {center}")
        return self.roots[key]

    def tie(self, ctx) -> int:
        return self.root_for(ctx.center).descend(ctx)[-1].leaf_id

    def path(self, ctx):
        return self.root_for(ctx.center).descend(ctx)

    def to_text(self):
        out = [f"{HEADER} leaves={self.num_tied_states}\n"]
        for key in sorted(self.roots, key=_root_sort):
            mode = "wb-shared" if self.share_wb_root else "wb-split"
            out.append(f"ROOT {_root_name(key)} {mode}\n")
            stack = [self.roots[key]]
            while stack:
                node = stack.pop()
                if node.is_leaf:
                    out.append(f"L {node.leaf_id}\n")
                else:
                    out.append(f"N {node.question} {node.gain:.17g}\n")
                    stack.append(node.no)
                    stack.append(node.yes)
        return "".join(out)

    def write(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith(HEADER + " leaves="):
            raise FormatError("missing CFTREE header")
        n_leaves = int(lines[0].split("leaves=", 1)[1])
        pos = 1
        roots = {}
        shared = None

        def parse_node():
            nonlocal pos
            if pos >= len(lines):
                raise FormatError("tree file truncated")
            parts = lines[pos].split()
            pos += 1
            if parts[0] == "L" and len(parts) == 2:
                return TreeNode(leaf_id=int(parts[1]))
            if parts[0] == "N" and len(parts) == 4:
                q = Question(Slot(parts[1]), frozenset(parts[2].split(",")))
                yes = parse_node()
                no = parse_node()
                return TreeNode(q, yes, no, float(parts[3]))
            raise FormatError(f"tree line {pos}: {lines[pos - 1]!r}")

        while pos < len(lines):
            parts = lines[pos].split()
            if parts[0] != "ROOT" or len(parts) != 3 or parts[2] not in ("wb-shared", "wb-split"):
                raise FormatError(f"tree line {pos + 1}: expected ROOT")
            pos += 1
            mode_shared = parts[2] == "wb-shared"
            if parts[1] not in (SIL, GARBAGE):
                if shared is not None and shared != mode_shared:
                    raise FormatError("mixed wb-shared and wb-split roots")
                shared = mode_shared
            sym, position = parse_unit_token(parts[1])
            if parts[1] in (SIL, GARBAGE) or mode_shared:
                key = (sym, None)
            else:
                key = (sym, position)
            roots[key] = parse_node()
        tmap = cls(roots, bool(shared))
        if tmap.num_tied_states != n_leaves:
            raise FormatError("leaf count does not match header")
        return tmap

    @classmethod
    def read(cls, path):
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _number_leaves(roots):
    next_id = 0
    for key in sorted(roots, key=_root_sort):
        stack = [roots[key]]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                node.leaf_id = next_id
                next_id += 1
            else:
                stack.append(node.no)
                stack.append(node.yes)


def _special_roots():
    return {(SIL, None): TreeNode(), (GARBAGE, None): TreeNode()}


def ci_tied_map(centers, share_wb_root=False) -> TiedStateMap:
    """One tied state per root group of the given center units (no splits)."""
    roots = _special_roots()
    for unit in centers:
        if not unit.is_special:
            roots.setdefault(root_key(unit, share_wb_root), TreeNode())
    _number_leaves(roots)
    return TiedStateMap(roots, share_wb_root)


class _Frontier:
    """A leaf under construction with its rows as dense arrays."""

    def __init__(self, node, contexts, stats, root_index, seq):
        self.node = node
        self.contexts = contexts
        self.counts = np.array([stats[c].count for c in contexts])
        self.sums = np.array([stats[c].sum for c in contexts])
        self.sum_sq = np.array([stats[c].sum_sq for c in contexts])
        self.root_index = root_index
        self.seq = seq
        self.best = None


def _best_split(front, questions, config):
    mask = np.array([[q.answer(c) for c in front.contexts] for q in questions], dtype=np.float64)
    inv = 1.0 - mask
    yes_n, no_n = mask @ front.counts, inv @ front.counts
    ll_yes = _loglik(yes_n, mask @ front.sums, mask @ front.sum_sq, config.var_floor)
    ll_no = _loglik(no_n, inv @ front.sums, inv @ front.sum_sq, config.var_floor)
    parent = _loglik(front.counts.sum(), front.sums.sum(axis=0),
                     front.sum_sq.sum(axis=0), config.var_floor)
    gains = ll_yes + ll_no - parent
    ok = (yes_n >= config.min_count) & (no_n >= config.min_count)
    gains = np.where(ok, gains, -np.inf)
    # questions arrive sorted by key, so argmax picks the smallest on ties
    i = int(np.argmax(gains))
    return float(gains[i]), i


def grow_tree(stats: StatsTable, questions, config: TreeConfig) -> TiedStateMap:
    """Greedy best-first growth over every root at once.

    Each step applies the split with the largest gain anywhere in the
    forest. Growth stops at ``max_leaves`` clustered leaves (SIL and
    GARBAGE are not counted) or when the best gain drops below ``min_gain``.
    """
    rows = _modeled_rows(stats)
    if not rows:
        raise EmptyStats("no modeled rows in statistics")
    questions = sorted(questions, key=Question.key)
    groups = {}
    for ctx in sorted(rows, key=lambda c: c.sort_key()):
        groups.setdefault(root_key(ctx.center, config.share_wb_root), []).append(ctx)
    roots = _special_roots()
    for key in groups:
        roots[key] = TreeNode()
    order = sorted(roots, key=_root_sort)
    # SIL and GARBAGE hold fixed ids outside the leaf budget
    if config.max_leaves < len(groups):
        raise ValueError(f"max_leaves={config.max_leaves} is below the "
                         f"{len(groups)} root groups")
    for key in groups:
        if key not in roots:
            raise MissingRoot(_root_name(key))

    frontier = []
    seq = 0
    for idx, key in enumerate(order):
        if key in groups:
            frontier.append(_Frontier(roots[key], groups[key], stats, idx, seq))
            seq += 1
    n_leaves = len(groups)
    splits = []
    while n_leaves < config.max_leaves and frontier and questions:
        for f in frontier:
            if f.best is None:
                f.best = _best_split(f, questions, config)
        pick = min(frontier, key=lambda f: (-f.best[0], f.root_index,
                                            questions[f.best[1]].key(), f.seq))
        gain, qi = pick.best
        if not math.isfinite(gain) or gain < config.min_gain:
            break
        q = questions[qi]
        yes_ctx = [c for c in pick.contexts if q.answer(c)]
        no_ctx = [c for c in pick.contexts if not q.answer(c)]
        node = pick.node
        node.question, node.gain = q, gain
        node.yes, node.no = TreeNode(), TreeNode()
        frontier.remove(pick)
        frontier.append(_Frontier(node.yes, yes_ctx, stats, pick.root_index, seq))
        frontier.append(_Frontier(node.no, no_ctx, stats, pick.root_index, seq + 1))
        seq += 2
        n_leaves += 1
        splits.append((_root_name(order[pick.root_index]), q, gain))
    _number_leaves(roots)
    return TiedStateMap(roots, config.share_wb_root, splits)


def tie(tied_map: TiedStateMap, ctx) -> int:
    return tied_map.tie(ctx)
