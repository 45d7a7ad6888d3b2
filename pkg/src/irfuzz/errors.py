"""Exception types shared across the package."""


class IrFuzzError(Exception):
    """Base class for all irfuzz errors."""


class UnbalancedDelimiters(IrFuzzError):
    """Braces in a seed file never re-balanced before end of input."""


class EmptyCorpus(IrFuzzError):
    pass


class EmptyTrainingSet(IrFuzzError):
    pass


class SeedTooShort(IrFuzzError):
    pass


class DegenerateDistribution(IrFuzzError):
    pass


class BackendUnavailable(IrFuzzError):
    """Remote generator backend unreachable or misbehaving."""


class DuplicatePass(IrFuzzError):
    pass


class MalformedLine(IrFuzzError):
    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno
        self.line = line


class CompilerMissing(IrFuzzError):
    """Compiler binary not found; distinct from a diagnostic failure."""


class NoSignal(IrFuzzError):
    """stderr contains neither an assertion nor any stack frame."""


class DuplicateOccurrence(IrFuzzError):
    """Same (program, pass) crash registered twice."""


class ConfigInvalid(IrFuzzError):
    pass


class CorruptCheckpoint(IrFuzzError):
    pass


class MalformedCsv(IrFuzzError):
    pass


class ZeroElapsed(IrFuzzError):
    pass


class NoTests(IrFuzzError):
    pass


class MalformedInput(IrFuzzError):
    """A campaign artifact on disk could not be parsed."""
