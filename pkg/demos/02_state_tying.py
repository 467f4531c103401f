"""
Growing a state-tying tree
==========================

Statistics for every tri-context of the letter "a" are drawn from four
well separated Gaussians, one per left neighbour. Greedy tree growth
should find exactly those four groups.
"""

import numpy as np

from chenone.context import TriContext
from chenone.stats import GaussStats, StatsTable
from chenone.tree import TreeConfig, generate_questions, grow_tree
from chenone.units import Unit

rng = np.random.default_rng(0)
dim = 3
centres = {s: rng.normal(0, 6, dim) for s in "bcde"}

rows = {}
for left in "bcde":
    for right in "fgh":
        frames = centres[left] + rng.standard_normal((50, dim))
        rows[TriContext(Unit(left), Unit("a"), Unit(right))] = GaussStats.from_frames(frames)
stats = StatsTable(dim, rows)

questions = generate_questions(stats)
print(len(questions), "candidate questions, e.g.", *questions[:3], sep="\n  ")

tied = grow_tree(stats, questions, TreeConfig(max_leaves=4))
for root, question, gain in tied.splits:
    print(f"split {root} on '{question}' gain {gain:.1f}")

# contexts sharing a left neighbour land on the same tied state
for ctx in stats.sorted_keys():
    print(ctx, "->", tied.tie(ctx))

print(tied.to_text())
