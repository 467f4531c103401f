"""
Graphemic lexicons
==================

Words are spelled with their own letters. The first and last letter of a
word carry a ``_WB`` tag so a model can treat them differently from the
same letter inside a word.
"""

from chenone.context import CdConfig, expand_contexts
from chenone.units import CaseMode, UnitInventory, build_lexicon

words = ["hello", "Michael's", "Ritz-Carlton", "DNN", "D.N.N.", "naïve", "..."]

# case is kept; accents are folded and punctuation other than - and ' goes
inventory = UnitInventory.graphemic(CaseMode.PRESERVE)
lexicon = build_lexicon(words, inventory)
print(lexicon.to_text())
print("skipped:", lexicon.skipped)

# lowercasing merges upper and lower case graphemes into one unit
lower = build_lexicon(words, UnitInventory.graphemic(CaseMode.LOWERCASE))
print(lower.to_text())
print(len(inventory), "units with case kept,",
      len(lower.inventory), "units lowercased")

# each letter becomes one HMM state labeled with its neighbours
for ctx in expand_contexts(lexicon["hello"][0], CdConfig()):
    print(ctx)
