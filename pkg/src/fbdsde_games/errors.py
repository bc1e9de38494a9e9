"""Exception hierarchy shared by all modules."""


class FbdsdeError(Exception):
    """Base class for every error raised by the package."""


class InvalidArgument(FbdsdeError, ValueError):
    pass


class ResourceLimitError(FbdsdeError):
    """Requested enumeration exceeds the supported size."""


class UnsupportedConfiguration(FbdsdeError):
    pass


class ValidationError(FbdsdeError):
    """A game specification violates its standing assumptions."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid specification")


class NumericalBreakdown(FbdsdeError):
    """Base class for failures of the decoupling solve."""


class DecouplingBreakdown(NumericalBreakdown):
    pass


class RiccatiBlowup(NumericalBreakdown):
    pass


class ConfigError(FbdsdeError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class SchemaError(ConfigError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
