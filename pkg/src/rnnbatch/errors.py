"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, shapes, or user input."""


class ParseError(ValueError):
    """Malformed input file. ``line`` is 1-based and counts the header."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DivergenceError(ArithmeticError):
    """A non-finite value showed up during training or inference."""

    def __init__(self, message: str, **location):
        self.location = dict(location)
        if location:
            where = ", ".join(f"{k}={v}" for k, v in location.items())
            message = f"{message} ({where})"
        super().__init__(message)

    def at(self, **location) -> "DivergenceError":
        """Return a copy with extra location fields (epoch, batch, ...)."""
        merged = {**location, **self.location}
        base = str(self.args[0]).split(" (")[0]
        return DivergenceError(base, **merged)
