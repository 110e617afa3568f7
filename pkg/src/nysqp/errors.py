"""Exception types raised across the package."""


class NysQPError(Exception):
    """Base class for all errors raised by nysqp."""


class DimensionError(NysQPError, ValueError):
    def __init__(self, what, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected length {expected}, got {actual}")


class NonpositiveScalingError(NysQPError, ValueError):
    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(f"scaling entry {index} is nonpositive ({value!r})")


class NumericalBreakdown(NysQPError, ArithmeticError):
    """Loss of positive definiteness or a non-finite value inside a Krylov solve."""

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")


class SketchFailure(NysQPError):
    """The Nystrom core matrix stayed numerically indefinite after all shift retries."""


class IndefiniteError(NysQPError):
    pass


class ParameterError(NysQPError, ValueError):
    pass


class ValidationError(NysQPError, ValueError):
    """Problem data violates one or more invariants; ``problems`` lists each one."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ParseError(NysQPError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


class UnsupportedTaskError(NysQPError, ValueError):
    pass


class InfeasibleError(NysQPError):
    pass
