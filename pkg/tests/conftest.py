import numpy as np
import pytest
from hypothesis import settings

from chenone.am import build_graphs, em_iterate, flat_start, align_corpus, retie
from chenone.context import CdConfig
from chenone.stats import StatsTable, accumulate, merge
from chenone.synth import SyntheticSpec, generate
from chenone.tree import TreeConfig, generate_questions, grow_tree
from chenone.units import CaseMode, UnitInventory

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _CRITERIA[number] = (title, report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcome = _CRITERIA[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {title}")


@pytest.fixture
def graphemes():
    return UnitInventory.graphemic(CaseMode.PRESERVE)


def train_small(words, cd_config, seed=0, num_utterances=60, dim=2, max_leaves=30,
                iterations=2, **spec_kw):
    """A small corpus and a CD model trained on it."""
    spec = SyntheticSpec(words=words, num_utterances=num_utterances, seed=seed, dim=dim,
                         min_words=1, max_words=3, **spec_kw)
    corpus = generate(spec)
    utts, lex = corpus.utterances, corpus.lexicon
    model = flat_start(utts, lex, cd_config)
    graphs = build_graphs(utts, lex, cd_config)
    for _ in range(iterations):
        model, _ = em_iterate(model, utts, graphs)
    stats = StatsTable(dim)
    for u, r in zip(utts, align_corpus(model, utts, graphs)):
        stats = merge(stats, accumulate(r.contexts, u.features))
    tied = grow_tree(stats, generate_questions(stats), TreeConfig(max_leaves=max_leaves))
    return corpus, retie(model, tied, stats), tied


@pytest.fixture(scope="session")
def small_model():
    return train_small(["at", "ta", "tat"], CdConfig(), context_units=frozenset("at"))


@pytest.fixture(scope="session")
def small_model_xw():
    return train_small(["at", "ta", "tat"], CdConfig(cross_word_context=True),
                       context_units=frozenset("at"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
