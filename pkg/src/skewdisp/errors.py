"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures to the
documented process exit status without inspecting messages.
"""


class SkewDispError(Exception):
    exit_code = 2


class ValidationError(SkewDispError):
    """Bad configuration or arguments detected before any computation."""

    exit_code = 1


class DomainError(SkewDispError, ValueError):
    """An argument outside the mathematical domain of an operation."""

    exit_code = 1


# -- data problems (exit 2) -------------------------------------------------

class DataError(SkewDispError):
    exit_code = 2


class FormatError(DataError):
    def __init__(self, message, line_numbers=()):
        self.line_numbers = tuple(line_numbers)
        if self.line_numbers:
            shown = ", ".join(str(n) for n in self.line_numbers[:20])
            more = "" if len(self.line_numbers) <= 20 else f" (+{len(self.line_numbers) - 20} more)"
            message = f"{message}; malformed lines: {shown}{more}"
        super().__init__(message)


class ParseError(DataError):
    pass


class GapError(DataError):
    def __init__(self, missing):
        self.missing = tuple(missing)
        super().__init__("missing months in series: " + ", ".join(self.missing))


class DegenerateGridError(DataError):
    pass


class ThinCrossSectionError(DataError):
    pass


class IncompleteMonthError(DataError):
    pass


class AlignmentError(DataError):
    pass


class InsufficientSampleError(DataError):
    pass


# -- degenerate statistics (exit 3) -----------------------------------------

class DegenerateStatisticError(SkewDispError):
    exit_code = 3


class UndefinedMomentError(DegenerateStatisticError):
    """Realized variance is zero so standardized moments do not exist."""


class CollinearityError(DegenerateStatisticError):
    pass


class DegenerateInstrumentError(DegenerateStatisticError):
    pass


class DegenerateBenchmarkError(DegenerateStatisticError):
    pass


class DegenerateForecastError(DegenerateStatisticError):
    pass
