"""Exception hierarchy.

``ValidationError`` subclasses signal bad inputs or configuration (CLI exit
code 1); ``DatforgeError`` subclasses that are not validation errors signal
failures while running (exit code 2).
"""


class DatforgeError(Exception):
    pass


class ValidationError(DatforgeError, ValueError):
    pass


class ParseError(ValidationError):
    pass


class FormatError(ValidationError):
    """Malformed binary container (bad magic, version or length)."""


class UnknownLanguage(ValidationError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EnglishUngrouped(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class FingerprintMismatch(DatforgeError):
    pass


class SequenceTooLong(ValidationError):
    pass


class NoTargetTokens(ValidationError):
    pass


class BadDensity(ValidationError):
    pass


class BadProbability(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class LayoutMismatch(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class IncompatibleBundles(ValidationError):
    pass


class DirectionError(ValidationError):
    pass


class MissingCorpus(DatforgeError):
    pass


class ModeError(ValidationError):
    pass


class MissingAdapter(DatforgeError):
    pass


class BadCounts(ValidationError):
    pass


class AnchorNotCovered(ValidationError):
    pass
