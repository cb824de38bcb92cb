"""Exception types raised by the lpcvt package."""


class LpcvtError(Exception):
    """Base class for every error raised by this package."""


class InputError(LpcvtError):
    """Bad user input: malformed files, invalid domains, bad flags."""


class NumericalError(LpcvtError):
    """A computation could not be carried out reliably."""


class NotPositiveDefinite(InputError):
    pass


class DegenerateFrame(NumericalError):
    pass


class EmptyField(InputError):
    pass


class OddP(InputError):
    """The exponent p must be an even integer >= 2 (and <= 16)."""


class DegenerateTriangle(NumericalError):
    pass


class NearDegenerate(NumericalError):
    """A Voronoi vertex is (numerically) defined by a singular plane system."""


class ParseError(InputError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class UnboundedPolytope(InputError):
    pass


class NonTriangleFace(ParseError):
    pass


class NonFiniteEnergy(NumericalError):
    pass


class SeedOutsideDomain(UserWarning):
    """Issued (not raised) when a seed lies outside the volume domain."""


class IoError(LpcvtError, OSError):
    """An output file could not be written."""
