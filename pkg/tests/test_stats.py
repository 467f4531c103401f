import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from chenone.context import TriContext
from chenone.errors import DimMismatch, FormatError, LengthMismatch
from chenone.stats import GaussStats, StatsTable, accumulate, merge
from chenone.units import Unit

A, B, C = Unit("a"), Unit("b"), Unit("c")
CTX_A = TriContext(None, A, B)
CTX_B = TriContext(A, B, None)


class TestGaussStats:
    def test_moments(self):
        st_ = GaussStats.from_frames([[1.0, 2.0], [3.0, 6.0]])
        assert st_.count == 2
        np.testing.assert_allclose(st_.mean(), [2.0, 4.0])
        np.testing.assert_allclose(st_.var(), [1.0, 4.0])

    def test_add_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            GaussStats.zeros(2) + GaussStats.zeros(3)

    @given(arrays(np.float64, st.tuples(st.integers(2, 20), st.integers(1, 3)),
                  elements=st.floats(-100, 100)),
           st.integers(1, 19))
    def test_additive(self, frames, cut):
        cut = min(cut, len(frames) - 1)
        whole = GaussStats.from_frames(frames)
        parts = GaussStats.from_frames(frames[:cut]) + GaussStats.from_frames(frames[cut:])
        assert parts.count == whole.count
        np.testing.assert_allclose(parts.sum, whole.sum, atol=1e-9)
        np.testing.assert_allclose(parts.sum_sq, whole.sum_sq, rtol=1e-12, atol=1e-9)


class TestAccumulate:
    def test_groups_frames(self):
        feats = np.arange(8.0).reshape(4, 2)
        table = accumulate([CTX_A, CTX_B, CTX_A, CTX_A], feats)
        assert table[CTX_A].count == 3 and table[CTX_B].count == 1
        np.testing.assert_allclose(table[CTX_A].sum, feats[[0, 2, 3]].sum(axis=0))
        assert table.total_count == 4

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            accumulate([CTX_A], np.zeros((2, 1)))

    def test_merge_is_order_free(self, rng):
        a = accumulate([CTX_A, CTX_B], rng.normal(size=(2, 3)))
        b = accumulate([CTX_B, CTX_B], rng.normal(size=(2, 3)))
        ab, ba = merge(a, b), merge(b, a)
        assert ab.sorted_keys() == ba.sorted_keys()
        for ctx in ab.sorted_keys():
            np.testing.assert_allclose(ab[ctx].sum, ba[ctx].sum)

    def test_merge_dim_mismatch(self):
        with pytest.raises(DimMismatch):
            merge(StatsTable(2), StatsTable(3))

    def test_subset_and_pooled(self, rng):
        table = accumulate([CTX_A, CTX_B, CTX_B], rng.normal(size=(3, 2)))
        sub = table.subset(lambda c: c.center == B)
        assert list(sub.rows) == [CTX_B]
        assert table.pooled().count == 3


class TestSerialization:
    def test_roundtrip_exact(self, graphemes, rng, tmp_path):
        table = accumulate([CTX_A, CTX_B, TriContext(B, C, A)], rng.normal(size=(3, 4)))
        table.write(tmp_path / "stats.txt")
        back = StatsTable.read(tmp_path / "stats.txt", graphemes)
        assert back.sorted_keys() == table.sorted_keys()
        for ctx in table.sorted_keys():
            assert back[ctx].count == table[ctx].count
            assert np.array_equal(back[ctx].sum, table[ctx].sum)
            assert np.array_equal(back[ctx].sum_sq, table[ctx].sum_sq)
        assert back.to_text() == table.to_text()

    def test_sorted_by_center(self):
        table = StatsTable(1, {CTX_B: GaussStats.zeros(1), CTX_A: GaussStats.zeros(1)})
        assert table.sorted_keys() == [CTX_A, CTX_B]

    def test_bad_header(self, graphemes):
        with pytest.raises(FormatError):
            StatsTable.from_text("junk\n", graphemes)

    def test_bad_row(self, graphemes):
        with pytest.raises(FormatError):
            StatsTable.from_text("CFSTATS v1 dim=2\n<eps> a <eps> 1 2\n", graphemes)


class TestShards:
    def shards(self, rng, n=4):
        ctxs = [CTX_A, CTX_B, TriContext(B, C, None), TriContext(None, C, A)]
        out = []
        for _ in range(n):
            T = int(rng.integers(1, 30))
            labels = [ctxs[i] for i in rng.integers(0, len(ctxs), T)]
            out.append((labels, rng.normal(3.0, 2.0, (T, 2))))
        return out

    def test_sharded_equals_sequential(self, rng):
        shards = self.shards(rng)
        merged = StatsTable(2)
        for labels, feats in shards:
            merged = merge(merged, accumulate(labels, feats))
        whole = accumulate([c for l, _ in shards for c in l], np.vstack([f for _, f in shards]))
        assert merged.sorted_keys() == whole.sorted_keys()
        for ctx in whole.sorted_keys():
            assert merged[ctx].count == whole[ctx].count
            np.testing.assert_allclose(merged[ctx].sum, whole[ctx].sum, rtol=1e-9)
            np.testing.assert_allclose(merged[ctx].sum_sq, whole[ctx].sum_sq, rtol=1e-9)

    def test_merge_associative(self, rng):
        a, b, c = (accumulate(l, f) for l, f in self.shards(rng, 3))
        left, right = merge(merge(a, b), c), merge(a, merge(b, c))
        for ctx in left.sorted_keys():
            np.testing.assert_allclose(left[ctx].sum_sq, right[ctx].sum_sq, rtol=1e-9)
            np.testing.assert_allclose(left[ctx].sum, right[ctx].sum, rtol=1e-9)

    def test_variance_non_negative(self, rng):
        table = StatsTable(2)
        for labels, feats in self.shards(rng, 6):
            table = merge(table, accumulate(labels, feats + 1e4))
        for _, st_ in table:
            assert np.all(st_.var() >= -1e-9)
