"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input lies outside the domain of a geometric operation."""


class ContractError(ValueError):
    """A caller violated an operation's shape or argument contract."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(ValueError):
    """Malformed dataset or record file."""
