class ShapeError(ValueError):
    """Raised when tensor shapes are inconsistent with an operation."""


class ConfigError(ValueError):
    """Raised for invalid layer or model configuration."""


class WeightFileError(ValueError):
    """Base class for weight container problems."""


class MissingWeightError(WeightFileError):
    def __init__(self, name):
        super().__init__(f"missing weight: {name}")
        self.name = name


class UnknownWeightError(WeightFileError):
    def __init__(self, name):
        super().__init__(f"unknown weight: {name}")
        self.name = name


class WeightShapeError(WeightFileError):
    def __init__(self, name, expected, found):
        super().__init__(
            f"shape mismatch for {name}: expected {tuple(expected)}, found {tuple(found)}"
        )
        self.name = name
        self.expected = tuple(expected)
        self.found = tuple(found)


class TruncatedWeightError(WeightFileError):
    pass


class UnsupportedTargetError(ValueError):
    pass
