"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class SchemaError(ValueError):
    """Scenario variables do not match the expected schema."""


class DataError(ValueError):
    """Input files could not be parsed or hold invalid values."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed or incompatible."""
