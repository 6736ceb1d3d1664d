"""Exception hierarchy shared across the package.

The split mirrors how failures surface at the command line: bad or
inconsistent input data (DataError), and computations that are well posed
on paper but break down numerically (NumericalError and its subclass
RankDeficientError). Programmer errors stay ordinary ValueError/TypeError.
"""


class HessplineError(Exception):
    """Base class for package-specific failures."""


class DataError(HessplineError):
    """Input data violates a documented contract (shape, finiteness, schema)."""


class NumericalError(HessplineError):
    """A numerical procedure failed: singular system, nonconvergence, lost bound."""


class RankDeficientError(NumericalError):
    """A local design or neighborhood has too little rank to proceed.

    Attributes
    ----------
    rank : int or None
        Observed numerical rank, when known.
    column : int or None
        Offending design-matrix column, when the failure came from
        orthogonalization.
    point : int or None
        Index of the data point whose neighborhood failed, when known.
    """

    def __init__(self, message, rank=None, column=None, point=None):
        super().__init__(message)
        self.rank = rank
        self.column = column
        self.point = point
