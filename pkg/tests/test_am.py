import numpy as np
import pytest
from scipy.stats import multivariate_normal

from chenone.am import (AcousticModel, Gmm, Utterance, align_corpus, build_graphs, em_iterate,
                        flat_start, model_centers, split_mixtures, viterbi_align)
from chenone.context import CdConfig, TriContext, build_alignment_graph
from chenone.errors import FormatError, NoPath, UtteranceTooShort
from chenone.tree import GARBAGE_ID, SIL_ID, ci_tied_map
from chenone.units import Unit, build_lexicon


@pytest.fixture
def lex(graphemes):
    return build_lexicon(["ab", "b"], graphemes)


def toy_corpus(rng, lex):
    """Frames near 0 for SIL, 5 for a and -5 for b, one dimension."""
    level = {"SIL": 0.0, "a": 5.0, "b": -5.0}
    utts = []
    for i, words in enumerate([["ab"], ["b", "ab"], ["ab", "b"], ["b"]] * 3):
        syms = ["SIL"] + [u.symbol for w in words for u in lex[w][0]] + ["SIL"]
        frames = [level[s] + 0.3 * rng.standard_normal((3, 1)) for s in syms]
        utts.append(Utterance(f"u{i}", words, np.vstack(frames)))
    return utts


class TestGmm:
    def test_loglik_matches_scipy(self, rng):
        g = Gmm([0.3, 0.7], rng.normal(size=(2, 3)), rng.uniform(0.5, 2, (2, 3)))
        x = rng.normal(size=(5, 3))
        ref = np.log(sum(w * multivariate_normal(m, np.diag(v)).pdf(x)
                         for w, m, v in zip(g.weights, g.means, g.vars)))
        np.testing.assert_allclose(g.loglik(x), ref, rtol=1e-10)

    def test_validation(self):
        with pytest.raises(ValueError):
            Gmm([0.5, 0.4], [[0.0], [1.0]], [[1.0], [1.0]])
        with pytest.raises(ValueError):
            Gmm([1.0], [[0.0, 1.0]], [[1.0]])

    def test_variance_floor(self):
        assert Gmm.single([0.0], [0.0]).vars[0, 0] == 1e-4


class TestModel:
    def test_matrix_matches_gmms(self, rng):
        tmap = ci_tied_map([Unit("a")])
        pdfs = {i: Gmm([0.5, 0.5], rng.normal(size=(2, 2)), np.ones((2, 2))) for i in range(3)}
        pdfs[0] = Gmm.single([1.0, 2.0], [0.5, 0.5])
        model = AcousticModel(tmap, pdfs, 2)
        x = rng.normal(size=(4, 2))
        mat = model.log_likelihoods(x)
        for j in range(3):
            np.testing.assert_allclose(mat[:, j], pdfs[j].loglik(x), rtol=1e-12)

    def test_missing_pdf(self):
        with pytest.raises(ValueError):
            AcousticModel(ci_tied_map([Unit("a")]), {0: Gmm.single([0.0], [1.0])}, 1)

    def test_text_roundtrip(self, rng, tmp_path):
        tmap = ci_tied_map([Unit("a")])
        pdfs = {i: Gmm([0.25, 0.75], rng.normal(size=(2, 2)), rng.uniform(1, 2, (2, 2)))
                for i in range(3)}
        model = AcousticModel(tmap, pdfs, 2)
        model.write(tmp_path / "m.mdl")
        back = AcousticModel.read(tmp_path / "m.mdl", tmap)
        assert back.to_text() == model.to_text()
        x = rng.normal(size=(3, 2))
        assert np.array_equal(back.log_likelihoods(x), model.log_likelihoods(x))

    def test_bad_text(self):
        with pytest.raises(FormatError):
            AcousticModel.from_text("CFAM v1 dim=1 leaves=1\nPDF 0 ncomp=1\nW 1\n",
                                    ci_tied_map([]))


class TestTraining:
    def test_flat_start_centers(self, lex):
        assert [str(u) for u in model_centers(lex, CdConfig())] == ["a_WB", "b_WB"]
        assert [str(u) for u in model_centers(lex, CdConfig(position_dependent=False))] \
            == ["a", "b"]

    def test_flat_start_skips_short(self, lex, rng):
        utts = toy_corpus(rng, lex)
        short = Utterance("short", ["ab", "ab"], np.zeros((3, 1)))
        skipped = []
        model = flat_start(utts + [short], lex, CdConfig(), skipped=skipped)
        assert skipped == ["short"]
        assert model.num_pdfs == 4
        with pytest.raises(UtteranceTooShort):
            flat_start([short], lex, CdConfig())

    def test_em_learns_levels(self, lex, rng):
        utts = toy_corpus(rng, lex)
        model = flat_start(utts, lex, CdConfig())
        graphs = build_graphs(utts, lex, CdConfig())
        for _ in range(4):
            model, _ = em_iterate(model, utts, graphs)
        tie = model.tied_map.tie
        a = tie(TriContext(None, lex["ab"][0][0], None))
        assert model.pdfs[a].means[0, 0] == pytest.approx(5.0, abs=0.3)
        assert model.pdfs[SIL_ID].means[0, 0] == pytest.approx(0.0, abs=0.3)

    def test_parallel_alignment_matches(self, lex, rng):
        utts = toy_corpus(rng, lex)
        model = flat_start(utts, lex, CdConfig())
        graphs = build_graphs(utts, lex, CdConfig())
        one = align_corpus(model, utts, graphs, jobs=1)
        two = align_corpus(model, utts, graphs, jobs=2)
        assert [r.states for r in one] == [r.states for r in two]
        assert [r.log_likelihood for r in one] == [r.log_likelihood for r in two]

    def test_no_path(self, lex):
        model = flat_start([Utterance("u", ["b"], np.zeros((3, 1)))], lex, CdConfig())
        g = build_alignment_graph(["ab"], lex, CdConfig())
        with pytest.raises(NoPath):
            viterbi_align(g, np.zeros((3, 1)), model)
        with pytest.raises(ValueError):
            viterbi_align(g, np.zeros((5, 2)), model)

    def test_em_reports_skipped(self, lex, rng):
        utts = toy_corpus(rng, lex)
        model = flat_start(utts, lex, CdConfig())
        short = Utterance("short", ["ab", "ab"], np.zeros((2, 1)))
        graphs = build_graphs(utts + [short], lex, CdConfig())
        skipped = []
        em_iterate(model, utts + [short], graphs, skipped=skipped)
        assert skipped == ["short"]

    def test_split_mixtures(self, lex, rng):
        utts = toy_corpus(rng, lex)
        model = split_mixtures(flat_start(utts, lex, CdConfig()), 3)
        for g in model.pdfs.values():
            assert g.num_components == 3
            assert g.weights.sum() == pytest.approx(1.0)
        with pytest.raises(ValueError):
            split_mixtures(model, 2)

    def test_retie_keeps_specials(self, small_model):
        corpus, model, tied = small_model
        assert model.tied_map is tied
        assert model.num_pdfs == tied.num_tied_states
        assert GARBAGE_ID in model.pdfs


class TestRecovery:
    def test_alignment_deterministic(self, small_model):
        corpus, model, _ = small_model
        u = corpus.utterances[5]
        g = build_alignment_graph(u.words, corpus.lexicon, CdConfig())
        assert viterbi_align(g, u.features, model) == viterbi_align(g, u.features, model)

    def test_parameter_recovery(self, graphemes, rng):
        """Three states 10 sigma apart with >= 500 frames each."""
        lex = build_lexicon(["ab"], graphemes)
        level = {"SIL": np.zeros(2), "a": np.array([10.0, 0.0]), "b": np.array([0.0, 10.0])}
        utts = []
        for i in range(60):
            parts = []
            for sym in ["SIL", "a", "b", "SIL"]:
                n = int(rng.integers(5, 20))
                parts.append(level[sym] + rng.standard_normal((n, 2)))
            utts.append(Utterance(f"u{i}", ["ab"], np.vstack(parts)))
        model = flat_start(utts, lex, CdConfig(False, True))
        graphs = build_graphs(utts, lex, CdConfig(False, True))
        for _ in range(5):
            model, _ = em_iterate(model, utts, graphs)
        for sym, unit in [("a", lex["ab"][0][0]), ("b", lex["ab"][0][1])]:
            tid = model.tied_map.tie(TriContext(None, unit, None))
            assert np.all(np.abs(model.pdfs[tid].means[0] - level[sym]) < 0.1)
        assert np.all(np.abs(model.pdfs[SIL_ID].means[0]) < 0.1)
