class DegenerateDataError(ValueError):
    """Data cannot support the requested fit, e.g. only one class is present."""


class InputError(ValueError):
    """Malformed input file or configuration."""
