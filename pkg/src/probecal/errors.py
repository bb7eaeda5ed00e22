"""Exception types shared across the package."""


class ProbecalError(Exception):
    """Base class for all package-specific errors."""


class ParseError(ProbecalError):
    """A data file row could not be parsed (bad column count, type, or code)."""


class ValidationError(ProbecalError):
    """Parsed data violate a dataset invariant (range, duplicate, replicate count)."""


class DesignError(ProbecalError):
    """A quadrant-assignment design is structurally invalid."""


class MissingPair(ProbecalError):
    """An examiner pair was requested that has no sites in the dataset."""


class DegenerateMarginals(ProbecalError):
    """Weighted kappa is undefined: chance agreement equals 1 (all mass in one cell)."""


class DimensionMismatch(ProbecalError):
    """Arrays passed to an operation have inconsistent shapes."""


class InsufficientChains(ProbecalError):
    """A convergence diagnostic needs more chains or draws than were supplied."""


class NumericalUnderflow(ProbecalError):
    """A predictive density averaged to exactly zero for some observation."""


class UnknownClass(ProbecalError):
    """A class id was referenced that does not exist in a partition summary."""


class RejectionOverflow(ProbecalError):
    """A truncated sampler failed to produce a finite draw (pathological state)."""
