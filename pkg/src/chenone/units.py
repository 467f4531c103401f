"""Acoustic unit inventory and lexicon construction.

A graphemic lexicon spells every word with its own letters. Letters at the
first and last position of a word get a ``_WB`` (word boundary) variant so
that position-dependent realizations can be modeled separately::

    hello         h_WB e l l o_WB
    Ritz-Carlton  R_WB i t z - C a r l t o n_WB
    D.N.N.        D_WB N N_WB

Phonetic dictionaries are read through the same types so that both kinds
of lexicon can feed the rest of the pipeline.
"""

from __future__ import annotations

import enum
import logging
import string
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    EmptyAfterNormalization,
    EmptyLexicon,
    MalformedLine,
    UnknownSymbol,
)

log = logging.getLogger(__name__)

WB_SUFFIX = "_WB"
SIL = "SIL"
GARBAGE = "GARBAGE"


class Position(enum.Enum):
    INTERNAL = "internal"
    WB = "wb"


class Kind(enum.Enum):
    GRAPHEME = "grapheme"
    PHONEME = "phoneme"
    SILENCE = "silence"
    GARBAGE = "garbage"


class CaseMode(enum.Enum):
    PRESERVE = "preserve"
    LOWERCASE = "lowercase"


class LexiconSource(enum.Enum):
    GRAPHEMIC = "graphemic"
    PHONETIC = "phonetic"


@dataclass(frozen=True)
class Unit:
    symbol: str
    position: Position = Position.INTERNAL
    kind: Kind = Kind.GRAPHEME

    def __str__(self):
        if self.position is Position.WB:
            return self.symbol + WB_SUFFIX
        return self.symbol

    def __repr__(self):
        return f"Unit({self})"

    def sort_key(self):
        return (self.symbol, self.position is Position.WB)

    @property
    def is_special(self):
        return self.kind in (Kind.SILENCE, Kind.GARBAGE)

    def internal(self):
        """The position-independent variant of this unit."""
        if self.position is Position.INTERNAL:
            return self
        return Unit(self.symbol, Position.INTERNAL, self.kind)

    def with_position(self, position):
        if self.is_special or position is self.position:
            return self
        return Unit(self.symbol, position, self.kind)


SIL_UNIT = Unit(SIL, Position.INTERNAL, Kind.SILENCE)
GARBAGE_UNIT = Unit(GARBAGE, Position.INTERNAL, Kind.GARBAGE)


def _build_fold_table():
    table = {}
    for cp in range(0x00C0, 0x0180):
        ch = chr(cp)
        base = "".join(
            c for c in unicodedata.normalize("NFKD", ch) if not unicodedata.combining(c)
        )
        if base and base.isascii() and base.isalpha():
            table[ch] = base
    # letters without a canonical decomposition
    table.update({
        "ß": "ss", "Æ": "AE", "æ": "ae", "Œ": "OE", "œ": "oe",
        "Ø": "O", "ø": "o", "Ð": "D", "ð": "d", "Đ": "D", "đ": "d",
        "Þ": "TH", "þ": "th", "Ł": "L", "ł": "l", "Ħ": "H", "ħ": "h",
        "ı": "i", "ĸ": "k", "Ŀ": "L", "ŀ": "l", "ŉ": "n", "Ŋ": "N",
        "ŋ": "n", "Ŧ": "T", "ŧ": "t", "ſ": "s", "Ĳ": "IJ", "ĳ": "ij",
    })
    return table


ACCENT_FOLD = _build_fold_table()

DEFAULT_GRAPHEMES = tuple(string.ascii_lowercase + string.ascii_uppercase + "-'")


def fold_accents(text):
    return "".join(ACCENT_FOLD.get(ch, ch) for ch in text)


def parse_unit_token(token):
    """Split ``"a_WB"`` into ``("a", Position.WB)``."""
    if token.endswith(WB_SUFFIX) and len(token) > len(WB_SUFFIX):
        return token[: -len(WB_SUFFIX)], Position.WB
    return token, Position.INTERNAL


class UnitInventory:
    """Ordered, dense set of units.

    Index 0 is SIL and index 1 is GARBAGE; every other base symbol follows
    in declaration order with its Internal variant before its WB variant.
    """

    def __init__(self, symbols: Iterable[str], kind=Kind.GRAPHEME,
                 case_mode=CaseMode.PRESERVE):
        self.case_mode = case_mode
        self.kind = kind
        seen = []
        for s in symbols:
            if case_mode is CaseMode.LOWERCASE and kind is Kind.GRAPHEME:
                s = s.lower()
            if s in (SIL, GARBAGE) or s in seen:
                continue
            if not s or any(c.isspace() for c in s) or s.endswith(WB_SUFFIX):
                raise ValueError(f"invalid unit symbol {s!r}")
            seen.append(s)
        self.symbols = tuple(seen)
        self._symbol_set = frozenset(seen)
        units = [SIL_UNIT, GARBAGE_UNIT]
        for s in self.symbols:
            units.append(Unit(s, Position.INTERNAL, kind))
            units.append(Unit(s, Position.WB, kind))
        self.units = tuple(units)
        self._index = {u: i for i, u in enumerate(units)}

    @classmethod
    def graphemic(cls, case_mode=CaseMode.PRESERVE, graphemes=DEFAULT_GRAPHEMES):
        return cls(graphemes, Kind.GRAPHEME, case_mode)

    @classmethod
    def phonetic(cls, phones):
        return cls(phones, Kind.PHONEME, CaseMode.PRESERVE)

    def __len__(self):
        return len(self.units)

    def __iter__(self):
        return iter(self.units)

    def __contains__(self, item):
        if isinstance(item, Unit):
            return item in self._index
        return item in self._symbol_set

    def __eq__(self, other):
        return (isinstance(other, UnitInventory) and self.units == other.units
                and self.case_mode is other.case_mode)

    def __hash__(self):
        return hash((self.units, self.case_mode))

    def index(self, unit):
        return self._index[unit]

    def unit(self, symbol, position=Position.INTERNAL):
        if symbol == SIL:
            return SIL_UNIT
        if symbol == GARBAGE:
            return GARBAGE_UNIT
        if symbol not in self._symbol_set:
            raise KeyError(symbol)
        return Unit(symbol, position, self.kind)

    def parse(self, token):
        """Resolve a serialized token such as ``"o_WB"``."""
        symbol, position = parse_unit_token(token)
        return self.unit(symbol, position)

    def write(self, path):
        lines = [f"{SIL} kind=silence", f"{GARBAGE} kind=garbage"]
        lines += [f"{s} kind={self.kind.value}" for s in self.symbols]
        lines.append(f"# case_mode={self.case_mode.value}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path):
        """Read an inventory file: one symbol per line, optional ``kind=``."""
        symbols = []
        kind = None
        case_mode = CaseMode.PRESERVE
        text = Path(path).read_text(encoding="utf-8")
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line[1:].strip().startswith("case_mode="):
                    case_mode = CaseMode(line.split("=", 1)[1].strip())
                continue
            parts = line.split()
            if len(parts) > 2:
                raise MalformedLine(lineno, raw)
            sym = parts[0]
            k = None
            if len(parts) == 2:
                if not parts[1].startswith("kind="):
                    raise MalformedLine(lineno, raw)
                try:
                    k = Kind(parts[1][5:])
                except ValueError:
                    raise MalformedLine(lineno, raw) from None
            if sym in (SIL, GARBAGE):
                continue
            if k is not None:
                if kind is not None and k is not kind:
                    raise MalformedLine(lineno, raw)
                kind = k
            symbols.append(sym)
        return cls(symbols, kind or Kind.PHONEME, case_mode)


def normalize_word(word: str, inventory: UnitInventory) -> str:
    """Fold accents, apply the case mode and drop non-grapheme characters."""
    text = fold_accents(word.strip())
    if inventory.case_mode is CaseMode.LOWERCASE:
        text = text.lower()
    out = "".join(ch for ch in text if ch in inventory)
    if not out:
        raise EmptyAfterNormalization(word)
    return out


def tag_positions(units: Sequence[Unit]) -> tuple:
    """Mark the first and last unit WB and everything in between Internal."""
    n = len(units)
    return tuple(
        u.with_position(Position.WB if i == 0 or i == n - 1 else Position.INTERNAL)
        for i, u in enumerate(units)
    )


def word_to_units(word: str, inventory: UnitInventory) -> tuple:
    norm = normalize_word(word, inventory)
    return tag_positions([inventory.unit(ch) for ch in norm])


def format_pron(pron):
    return " ".join(str(u) for u in pron)


@dataclass
class Lexicon:
    """Word to pronunciations map; insertion order is preserved."""

    entries: dict
    inventory: UnitInventory
    source: LexiconSource = LexiconSource.GRAPHEMIC
    skipped: tuple = field(default=())

    def __len__(self):
        return len(self.entries)

    def __contains__(self, word):
        return word in self.entries

    def __getitem__(self, word):
        return self.entries[word]

    @property
    def words(self):
        return list(self.entries)

    def pronunciations(self):
        for word, prons in self.entries.items():
            for pron in prons:
                yield word, pron

    def to_text(self):
        lines = [f"{w}\t{format_pron(p)}" for w, p in self.pronunciations()]
        return "".join(line + "\n" for line in lines)

    def write(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def read(cls, path, inventory, source=LexiconSource.GRAPHEMIC):
        """Read a lexicon whose units already carry their ``_WB`` tags."""
        entries = _parse_lexicon(path, inventory, retag=False)
        if not entries:
            raise EmptyLexicon(str(path))
        return cls(entries, inventory, source)


def build_lexicon(word_list: Sequence[str], inventory: UnitInventory) -> Lexicon:
    entries = {}
    skipped = []
    for word in word_list:
        word = word.strip()
        if not word or word in entries:
            continue
        try:
            entries[word] = [word_to_units(word, inventory)]
        except EmptyAfterNormalization as err:
            log.warning("skipping %r: %s", word, err)
            skipped.append(word)
    if not entries:
        raise EmptyLexicon("no word survived normalization")
    return Lexicon(entries, inventory, LexiconSource.GRAPHEMIC, tuple(skipped))


def _parse_lexicon(path, inventory, retag):
    entries = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip() or raw.startswith("#"):
            continue
        if "\t" not in raw:
            raise MalformedLine(lineno, raw)
        word, _, rest = raw.partition("\t")
        word = word.strip()
        tokens = rest.split()
        if not word or not tokens:
            raise MalformedLine(lineno, raw)
        pron = []
        for tok in tokens:
            symbol, position = parse_unit_token(tok)
            if symbol not in inventory or symbol in (SIL, GARBAGE):
                raise UnknownSymbol(lineno, tok)
            pron.append(inventory.unit(symbol, position))
        pron = tag_positions(pron) if retag else tuple(pron)
        prons = entries.setdefault(word, [])
        if pron not in prons:
            prons.append(pron)
    return entries


def load_phonetic_lexicon(path, inventory: UnitInventory) -> Lexicon:
    """Read ``word<TAB>phone phone ...`` lines and apply WB tags."""
    entries = _parse_lexicon(path, inventory, retag=True)
    if not entries:
        raise EmptyLexicon(str(path))
    return Lexicon(entries, inventory, LexiconSource.PHONETIC)
