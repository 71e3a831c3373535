class InvalidArgumentError(ValueError):
    """Raised when shapes or parameters do not fit the operation."""


class InvalidMeasureError(ValueError):
    """Raised when a state distribution cannot play the role it is used for (e.g. a sampling measure with zeros)."""


class OracleContractError(RuntimeError):
    """Raised when an approximate greedy policy violates nu T_kappa^pi v >= nu T_kappa v - delta."""
