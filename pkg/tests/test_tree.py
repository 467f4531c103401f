import math

import numpy as np
import pytest

import oracles
from chenone.am import align_corpus, build_graphs
from chenone.context import CdConfig, TriContext
from chenone.errors import EmptyStats, FormatError, UnknownCenterUnit, ZeroCount
from chenone.stats import GaussStats, StatsTable, accumulate, merge
from chenone.tree import (GARBAGE_ID, POSITION_QUESTION, SIL_ID, Question, Slot, TiedStateMap,
                          TreeConfig, ci_tied_map, cluster_units, generate_questions, grow_tree,
                          single_gauss_loglik, split_gain)
from chenone.units import GARBAGE_UNIT, SIL_UNIT, Position, Unit


def U(s, wb=False):
    return Unit(s, Position.WB if wb else Position.INTERNAL)


def table_from(spec, rng, dim=2):
    """``spec`` maps a context to (mean, frame count)."""
    rows = {ctx: GaussStats.from_frames(np.asarray(mu) + rng.standard_normal((n, dim)))
            for ctx, (mu, n) in spec.items()}
    return StatsTable(dim, rows)


@pytest.fixture
def two_groups(rng):
    """Center "a" splits on whether the left neighbour is "b"."""
    spec = {}
    for left in "bcd":
        for right in "ef":
            mu = [8.0, 0.0] if left == "b" else [0.0, 0.0]
            spec[TriContext(U(left), U("a"), U(right))] = (mu, 40)
    spec[TriContext(None, SIL_UNIT, None)] = ([0.0, 5.0], 50)
    return table_from(spec, rng)


class TestLikelihood:
    def test_matches_closed_form(self, rng):
        frames = rng.normal(2.0, 1.5, (37, 3))
        assert single_gauss_loglik(GaussStats.from_frames(frames)) == pytest.approx(
            oracles.gauss_loglik(frames), rel=1e-12)

    def test_variance_floor(self):
        frames = np.ones((5, 2))
        expected = -0.5 * 5 * 2 * (math.log(2 * math.pi * 1e-4) + 1)
        assert single_gauss_loglik(GaussStats.from_frames(frames)) == pytest.approx(expected)

    def test_zero_count(self):
        with pytest.raises(ZeroCount):
            single_gauss_loglik(GaussStats.zeros(2))

    def test_split_gain_min_count(self, two_groups):
        rows = two_groups.subset(lambda c: c.center.symbol == "a")
        q = Question(Slot.LEFT, frozenset("b"))
        assert split_gain(rows.pooled(), q, rows, min_count=81) == -math.inf
        assert split_gain(rows.pooled(), q, rows) > 0

    def test_split_gain_empty(self):
        with pytest.raises(EmptyStats):
            split_gain(GaussStats.zeros(1), POSITION_QUESTION, StatsTable(1))


class TestQuestions:
    def test_answers(self):
        ctx = TriContext(None, U("a", wb=True), U("b"))
        assert not Question(Slot.LEFT, frozenset("a")).answer(ctx)
        assert Question(Slot.RIGHT, frozenset("bc")).answer(ctx)
        assert Question(Slot.CENTER, frozenset("a")).answer(ctx)
        assert POSITION_QUESTION.answer(ctx)

    def test_empty_members(self):
        with pytest.raises(ValueError):
            Question(Slot.LEFT, frozenset())

    def test_generated_set(self, two_groups):
        qs = generate_questions(two_groups)
        assert qs == sorted(qs, key=Question.key)
        assert POSITION_QUESTION in qs
        assert not any(q.slot is Slot.CENTER for q in qs)
        members = {q.members for q in qs if q.slot is Slot.LEFT}
        assert {frozenset(s) for s in "abcdef"} <= members
        assert not any("SIL" in m for m in members)
        assert any(q.slot is Slot.CENTER for q in generate_questions(two_groups, True))

    def test_cluster_merges_closest_first(self, rng):
        spec = {TriContext(None, U(s), None): (mu, 200) for s, mu in
                [("a", [0, 0]), ("b", [0.1, 0]), ("c", [9, 9])]}
        merges = cluster_units(table_from(spec, rng))
        assert merges == [frozenset("ab"), frozenset("abc")]


class TestGrowTree:
    def test_finds_split(self, two_groups):
        tmap = grow_tree(two_groups, generate_questions(two_groups), TreeConfig(max_leaves=2))
        assert tmap.num_tied_states == 4  # SIL, GARBAGE and two leaves of "a"
        assert tmap.splits[0][1] == Question(Slot.LEFT, frozenset("b"))
        b_ids = {tmap.tie(c) for c in two_groups.sorted_keys()
                 if c.center.symbol == "a" and c.left.symbol == "b"}
        other = {tmap.tie(c) for c in two_groups.sorted_keys()
                 if c.center.symbol == "a" and c.left.symbol != "b"}
        assert len(b_ids) == len(other) == 1 and b_ids != other

    def test_special_ids(self, two_groups):
        tmap = grow_tree(two_groups, generate_questions(two_groups), TreeConfig())
        assert tmap.tie(TriContext(None, SIL_UNIT, None)) == SIL_ID == 0
        assert tmap.tie(TriContext(None, GARBAGE_UNIT, None)) == GARBAGE_ID == 1

    def test_budget_excludes_specials(self, two_groups):
        for budget in (1, 2, 3):
            tmap = grow_tree(two_groups, generate_questions(two_groups),
                             TreeConfig(max_leaves=budget))
            assert tmap.num_tied_states == budget + 2

    def test_budget_below_roots(self, rng):
        spec = {TriContext(None, U(s), None): ([0, 0], 10) for s in "ab"}
        t = table_from(spec, rng)
        with pytest.raises(ValueError):
            grow_tree(t, generate_questions(t), TreeConfig(max_leaves=1))

    def test_min_gain_stops(self, two_groups):
        tmap = grow_tree(two_groups, generate_questions(two_groups),
                         TreeConfig(max_leaves=50, min_gain=1e9))
        assert tmap.num_tied_states == 3
        assert tmap.splits == []

    def test_gains_sorted_within_budget(self, two_groups):
        tmap = grow_tree(two_groups, generate_questions(two_groups), TreeConfig(max_leaves=6))
        assert tmap.splits[0][2] == max(g for _, _, g in tmap.splits)

    def test_wb_roots(self, rng):
        spec = {TriContext(None, U("a", wb), U("b")): ([4.0 * wb, 0], 30) for wb in (False, True)}
        t = table_from(spec, rng)
        split = grow_tree(t, generate_questions(t), TreeConfig())
        shared = grow_tree(t, generate_questions(t), TreeConfig(share_wb_root=True))
        assert split.num_tied_states == 4
        assert shared.num_tied_states == 4
        assert shared.splits[0][1] == POSITION_QUESTION

    def test_unknown_center(self, two_groups):
        tmap = grow_tree(two_groups, generate_questions(two_groups), TreeConfig())
        with pytest.raises(UnknownCenterUnit):
            tmap.tie(TriContext(None, U("z"), None))

    def test_deterministic(self, two_groups):
        cfg = TreeConfig(max_leaves=5)
        a = grow_tree(two_groups, generate_questions(two_groups), cfg).to_text()
        b = grow_tree(two_groups, generate_questions(two_groups), cfg).to_text()
        assert a == b

    def test_empty_stats(self):
        with pytest.raises(EmptyStats):
            grow_tree(StatsTable(1), [POSITION_QUESTION], TreeConfig())

    def test_min_count_config(self):
        with pytest.raises(ValueError):
            TreeConfig(min_count=0)


class TestSerialization:
    def test_roundtrip(self, two_groups, tmp_path):
        tmap = grow_tree(two_groups, generate_questions(two_groups), TreeConfig(max_leaves=4))
        tmap.write(tmp_path / "tree.txt")
        back = TiedStateMap.read(tmp_path / "tree.txt")
        assert back.to_text() == tmap.to_text()
        for ctx in two_groups.sorted_keys():
            assert back.tie(ctx) == tmap.tie(ctx)

    def test_ci_map(self):
        tmap = ci_tied_map([U("b"), U("a"), U("a", True)])
        assert tmap.num_tied_states == 5
        assert [tmap.tie(TriContext(None, u, None)) for u in (U("a"), U("a", True), U("b"))] \
            == [2, 3, 4]
        assert ci_tied_map([U("a"), U("a", True)], share_wb_root=True).num_tied_states == 3

    @pytest.mark.parametrize("text", ["", "CFTREE v1 leaves=2\nROOT SIL wb-split\nL 0\n",
                                      "CFTREE v1 leaves=1\nROOT SIL sideways\nL 0\n",
                                      "CFTREE v1 leaves=1\nROOT a wb-split\nN Left b 1.0\nL 0\n"])
    def test_rejects(self, text):
        with pytest.raises(FormatError):
            TiedStateMap.from_text(text)


class TestTreeProperties:
    @pytest.fixture
    def trained_stats(self, small_model):
        corpus, model, _ = small_model
        graphs = build_graphs(corpus.utterances, corpus.lexicon, CdConfig())
        stats = StatsTable(model.dim)
        for u, r in zip(corpus.utterances, align_corpus(model, corpus.utterances, graphs)):
            stats = merge(stats, accumulate(r.contexts, u.features))
        return stats

    def test_gains_and_partition(self, trained_stats):
        cfg = TreeConfig(max_leaves=40, min_gain=1.0)
        tmap = grow_tree(trained_stats, generate_questions(trained_stats), cfg)
        assert all(g >= cfg.min_gain for _, _, g in tmap.splits)
        counts = {}
        for ctx, st_ in trained_stats:
            leaves = [n for n in tmap.path(ctx) if n.is_leaf]
            assert len(leaves) == 1
            counts[leaves[0].leaf_id] = counts.get(leaves[0].leaf_id, 0) + st_.count
        assert sum(counts.values()) == trained_stats.total_count

    def test_monotone_refinement(self, trained_stats):
        qs = generate_questions(trained_stats)
        prefix = None
        for budget in (3, 5, 8, 12):
            splits = grow_tree(trained_stats, qs, TreeConfig(max_leaves=budget)).splits
            if prefix is not None:
                assert splits[:len(prefix)] == prefix
            prefix = splits

    def test_split_roots_never_mix_positions(self, trained_stats):
        tmap = grow_tree(trained_stats, generate_questions(trained_stats), TreeConfig())
        position = {}
        for ctx, _ in trained_stats:
            if ctx.center.is_special:
                continue
            position.setdefault(tmap.tie(ctx), set()).add(ctx.center.position)
        assert all(len(p) == 1 for p in position.values())
