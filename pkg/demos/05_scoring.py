"""
Scoring names and rare words
============================

Word error rate treats every word alike. Character error rate over
tagged spans shows how close the recognizer came on proper nouns and on
rare words, where a near miss still helps a reader.
"""

from chenone.evaluate import TagLabel, TagSpan, align_words, score_corpus, select_rare_words

refs = {
    "u1": "we met Jean Valjean in Paris".split(),
    "u2": "the Ritz-Carlton is closed".split(),
    "u3": "Saint Paul spoke".split(),
}
hyps = {
    "u1": "we met John Valjean in paris".split(),
    "u2": "the Ritz Carlton is closed".split(),
    "u3": "saint Paul spoke".split(),
}
tags = [
    TagSpan("u1", 2, 3, TagLabel.PROPER_NOUN),
    TagSpan("u1", 5, 5, TagLabel.PROPER_NOUN),
    TagSpan("u2", 1, 1, TagLabel.PROPER_NOUN),
    TagSpan("u3", 0, 1, TagLabel.PROPER_NOUN),
]

# "Ritz" comes out as an insertion and attaches to the word before it, so
# the tagged segment for Ritz-Carlton is scored against "Carlton" alone
for op in align_words(refs["u2"], hyps["u2"]):
    print(op)

train_counts = {"we": 40, "met": 12, "the": 80, "is": 35, "in": 50, "closed": 3, "spoke": 2}
rare = select_rare_words(train_counts, threshold=0.5)
print("rare words:", sorted(rare))

report = score_corpus(refs, hyps, tags, rare)
print(report.to_text(), end="")
