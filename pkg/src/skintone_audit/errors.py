"""Exception hierarchy shared across the toolkit."""


class AuditError(Exception):
    """Base class for every error raised by skintone_audit."""


# imaging
class EmptyMask(AuditError, ValueError):
    pass


class NoSkinPixels(AuditError, ValueError):
    pass


class EmptyCrop(AuditError, ValueError):
    pass


# skin_transform
class EmptyHistogram(AuditError, ValueError):
    pass


class MapMismatch(AuditError, ValueError):
    pass


class EmptyEnsemble(AuditError, ValueError):
    pass


# model
class NoFace(AuditError):
    """The scoring backend found no face in the submitted image."""


class InputShape(AuditError, ValueError):
    pass


class DegenerateData(AuditError, ValueError):
    pass


class TransportError(AuditError):
    """Network failure talking to a remote scorer (after retries)."""


class MalformedReply(AuditError):
    pass


# stability
class EmptyInput(AuditError, ValueError):
    pass


class TooFewSamples(AuditError, ValueError):
    pass


class MissingLabel(AuditError, ValueError):
    pass


# explain
class NotClassifiedK(AuditError, ValueError):
    pass


class Diverged(AuditError, ArithmeticError):
    pass


class EmptyGroup(AuditError, ValueError):
    pass


# audit_cli
class ManifestError(AuditError, ValueError):
    """A manifest row failed to parse or validate."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class MissingFile(AuditError, FileNotFoundError):
    pass


class MissingScore(AuditError, KeyError):
    pass
