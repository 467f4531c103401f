"""
Training and decoding on synthetic speech
=========================================

A synthetic corpus gives every letter realization its own Gaussian, so
the right answer is known. We train a context-independent model, grow a
tree over its alignments, retrain with tied states and decode held-out
utterances.
"""

from chenone.am import align_corpus, build_graphs, em_iterate, flat_start, retie
from chenone.context import CdConfig
from chenone.decode import DecodeConfig, build_prefix_tree, decode
from chenone.evaluate import align_words, wer
from chenone.lm import train_ngram
from chenone.stats import StatsTable, accumulate, merge
from chenone.synth import SyntheticSpec, generate, split_corpus
from chenone.tree import TreeConfig, generate_questions, grow_tree

spec = SyntheticSpec(num_utterances=300, seed=1)
corpus = generate(spec)
train, test = split_corpus(corpus, 0.2)
lexicon = corpus.lexicon
config = CdConfig()

# flat start, then Viterbi EM on the context-independent model
model = flat_start(train, lexicon, config)
graphs = build_graphs(train, lexicon, config)
for i in range(5):
    model, loglik = em_iterate(model, train, graphs)
    print(f"CI iteration {i}: log-likelihood {loglik:.1f}")

# tri-context statistics from the final alignment
stats = StatsTable(spec.dim)
for utt, result in zip(train, align_corpus(model, train, graphs)):
    stats = merge(stats, accumulate(result.contexts, utt.features))
print(len(stats), "distinct tri-contexts seen")

tied = grow_tree(stats, generate_questions(stats),
                 TreeConfig(max_leaves=200, min_gain=20, min_count=10))
print(tied.num_tied_states, "tied states")

model = retie(model, tied, stats)
for i in range(4):
    model, loglik = em_iterate(model, train, graphs)
    print(f"CD iteration {i}: log-likelihood {loglik:.1f}")

lm = train_ngram([u.words for u in train], order=2, vocabulary=lexicon.words)
tree = build_prefix_tree(lexicon, tied, config)
alignments = []
for utt in test:
    result = decode(utt.features, model, tree, lm, DecodeConfig())
    alignments.append(align_words(utt.words, result.words))
    if len(alignments) <= 3:
        print("REF:", " ".join(utt.words))
        print("HYP:", " ".join(result.words))
print(wer(alignments))
