"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: parse/alignment/split problems are
input errors (exit 2), everything else numerical (exit 3).
"""


class XMergeError(Exception):
    """Base class for all package-specific errors."""


class ParseError(XMergeError):
    """A file could not be parsed; message names the file and line."""


class AlignmentError(XMergeError):
    """Gene universes of the input studies cannot be aligned."""


class ShapeError(XMergeError):
    """Array arguments have inconsistent shapes."""


class ParameterError(XMergeError):
    """A model parameter violates its domain (e.g. nonpositive variance)."""


class FitError(XMergeError):
    """Spline regression could not be set up or solved."""


class EstimationError(XMergeError):
    """A parameter estimate could not be formed from the given data."""


class SplitError(XMergeError):
    """A balanced split of arrays is impossible for the given labels."""
