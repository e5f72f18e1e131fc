"""Exception hierarchy shared by the library and the command line.

The CLI maps each family onto an exit code: input errors -> 2,
numerical errors -> 3, adaptation / no-move -> 4.
"""


class ProMPError(Exception):
    exit_code = 1


class InputError(ProMPError, ValueError):
    exit_code = 2


class ParseError(InputError):
    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class DimensionError(InputError):
    pass


class TimeOrderError(InputError):
    pass


class SegmentationError(InputError):
    pass


class NumericalError(ProMPError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class AdaptationError(ProMPError):
    exit_code = 4

    def __init__(self, message, best=None, diagnostics=None):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics or {}


class NoMoveError(AdaptationError):
    pass
