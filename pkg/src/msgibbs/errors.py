class NumericalError(ArithmeticError):
    """A computed identity failed its tolerance."""


class InfeasibleTargetsError(RuntimeError):
    """No multipliers reproduce the requested (energy, entropy) targets."""


class ConfigError(ValueError):
    """Malformed experiment configuration."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
