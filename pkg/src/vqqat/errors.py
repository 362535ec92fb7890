class ConfigError(ValueError):
    """Invalid shapes, bit widths, or configuration values."""


class IDXParseError(ValueError):
    """Malformed IDX file."""


class NonFiniteError(FloatingPointError):
    """A loss or gradient became NaN/Inf during training."""

    def __init__(self, tensor_name, step=None):
        self.tensor_name = tensor_name
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite values in {tensor_name}{where}")
