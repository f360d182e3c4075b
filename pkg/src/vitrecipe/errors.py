"""Error taxonomy shared across the package."""


class DimensionError(ValueError):
    """Tensor/image extents incompatible with the requested operation."""


class ParameterError(ValueError):
    """A scalar argument is outside its documented range."""


class ContractError(ValueError):
    """A documented precondition on values (not shapes) was violated."""


class FormatError(ValueError):
    """A file or byte stream does not match its declared format."""
