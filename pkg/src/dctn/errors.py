class ShapeError(ValueError):
    """Array dimensions do not match what an operation expects."""


class StateError(RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class NonFiniteError(FloatingPointError):
    """A loss or gradient became NaN/Inf during training."""


class ConfigError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)
