"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes or extents are incompatible for the requested operation."""


class DomainError(ValueError):
    """Input values outside the mathematical domain of the operation."""


class ParameterError(ValueError):
    """A configuration or call argument is out of its allowed range."""


class ParseError(ValueError):
    """Malformed file content. Carries the byte offset or line number."""

    def __init__(self, message, *, offset=None, line=None):
        loc = []
        if offset is not None:
            loc.append(f"byte offset {offset}")
        if line is not None:
            loc.append(f"line {line}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.offset = offset
        self.line = line


class DegenerateMatchError(ValueError):
    """Zero-energy patch makes the normalized correlation undefined."""


class NonFiniteError(ArithmeticError):
    """A forward value or gradient became NaN or infinite."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during optimization."""

    def __init__(self, step, message="loss is non-finite"):
        super().__init__(f"training diverged at step {step}: {message}")
        self.step = step
