"""Exception hierarchy shared by every module."""


class HimorError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateBlend(HimorError):
    pass


class DegenerateGeometry(HimorError):
    pass


class InvalidDepth(HimorError):
    pass


class ClusterCountExceedsPoints(HimorError):
    pass


class ShapeMismatch(HimorError):
    pass


class InvalidBinding(HimorError):
    pass


class ZeroNorm(HimorError):
    pass


class TreeError(HimorError):
    """A motion tree violates one of its structural invariants."""


class SpecError(HimorError):
    pass


class ParseError(HimorError):
    def __init__(self, message, line=None, offset=None):
        where = ""
        if line is not None:
            where = f" (line {line}, offset {offset})"
        super().__init__(message + where)
        self.line = line
        self.offset = offset


class VersionError(HimorError):
    pass


class NonFiniteLoss(HimorError):
    def __init__(self, step, value):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value
