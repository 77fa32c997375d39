"""Exception hierarchy shared by every typeshift module."""


class TypeshiftError(Exception):
    """Base class for all package errors."""


class ValidationError(TypeshiftError, ValueError):
    """A configuration or argument combination is invalid."""


class UnparsableFont(TypeshiftError):
    pass


class MissingGlyph(TypeshiftError, KeyError):
    def __init__(self, codepoints, font_id=""):
        if isinstance(codepoints, int):
            codepoints = [codepoints]
        self.codepoints = list(codepoints)
        names = ", ".join(f"U+{cp:04X}" for cp in self.codepoints)
        super().__init__(f"no glyph for {names} in {font_id or 'font'}")

    def __str__(self):
        return self.args[0]


class InsufficientCorpus(ValidationError):
    pass


class EmptyManifest(ValidationError):
    pass


class PolicyError(ValidationError):
    """Loss weights or options incompatible with the pairing policy."""


class ShapeMismatch(TypeshiftError, ValueError):
    pass


class ShapeTooSmall(ShapeMismatch):
    pass


class UnknownStyleIndex(TypeshiftError, IndexError):
    pass


class UnknownLayer(TypeshiftError, KeyError):
    def __str__(self):
        return self.args[0] if self.args else ""


class NonFiniteInput(TypeshiftError, ValueError):
    pass


class NonFiniteLoss(TypeshiftError, FloatingPointError):
    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


class ConfigMismatch(ValidationError):
    pass


class MissingGroundTruth(ValidationError):
    pass


class OutputExists(ValidationError):
    """An output path is already taken and overwriting was not requested."""


class CorruptCheckpoint(TypeshiftError):
    """A file is not a readable checkpoint archive."""
