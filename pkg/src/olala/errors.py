"""Exception types shared across the package."""


class GeometryError(ValueError):
    """Degenerate lattice geometry: singular generator, empty codebook, etc."""


class ResourceLimitError(RuntimeError):
    """An enumeration or search would exceed its configured candidate cap."""


class ProtocolError(RuntimeError):
    """Malformed or missing client/server payload data."""


class NumericError(ArithmeticError):
    """Non-finite values encountered where finite math is required."""


class PartitionError(ValueError):
    """Dataset cannot be split under the requested sharding scheme."""


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending key."""
