"""Exception types raised across the toolkit."""


class ChenoneError(Exception):
    """Base class for every error raised by this package."""


# units
class EmptyAfterNormalization(ChenoneError):
    def __init__(self, word):
        super().__init__(f"no grapheme survives normalization of {word!r}")
        self.word = word


class EmptyLexicon(ChenoneError):
    pass


class UnknownSymbol(ChenoneError):
    def __init__(self, line, symbol):
        super().__init__(f"line {line}: unknown symbol {symbol!r}")
        self.line = line
        self.symbol = symbol


class MalformedLine(ChenoneError):
    def __init__(self, line, text=""):
        msg = f"line {line}: malformed"
        if text:
            msg += f": {text!r}"
        super().__init__(msg)
        self.line = line


# context
class EmptyTranscript(ChenoneError):
    pass


# stats
class LengthMismatch(ChenoneError):
    pass


class DimMismatch(ChenoneError):
    pass


# tree
class ZeroCount(ChenoneError):
    pass


class EmptyStats(ChenoneError):
    pass


class MissingRoot(ChenoneError):
    pass


class UnknownCenterUnit(ChenoneError):
    pass


# am
class UtteranceTooShort(ChenoneError):
    pass


class NoPath(ChenoneError):
    pass


# decode
class MalformedArpa(ChenoneError):
    def __init__(self, line, text=""):
        super().__init__(f"ARPA line {line}: {text}")
        self.line = line


class OrderMismatch(ChenoneError):
    pass


class NoHypothesis(ChenoneError):
    pass


# eval
class EmptyReference(ChenoneError):
    pass


class InvalidSpan(ChenoneError):
    pass


class EmptySegments(ChenoneError):
    pass


# pipeline
class MissingArtifact(ChenoneError):
    pass


class FormatError(ChenoneError):
    """A serialized artifact does not follow its documented layout."""
