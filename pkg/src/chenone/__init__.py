"""Graphemic acoustic modeling toolkit: lexicons with word-boundary tags,
decision-tree tied context-dependent graphemes, GMM-HMM training, a
prefix-tree decoder and tagged-segment error analysis."""

from .context import CdConfig, HmmTopology, TriContext
from .errors import ChenoneError
from .units import CaseMode, Lexicon, Unit, UnitInventory, build_lexicon

__version__ = "0.1.0"

__all__ = [
    "CaseMode", "CdConfig", "ChenoneError", "HmmTopology", "Lexicon", "TriContext",
    "Unit", "UnitInventory", "build_lexicon",
]
