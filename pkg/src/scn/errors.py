"""Exception types raised across the toolkit."""


class SCNError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(SCNError, ValueError):
    pass


class SizeError(SCNError, ValueError):
    pass


class ConfigError(SCNError, ValueError):
    pass


class FormatError(SCNError, ValueError):
    pass


class DatasetError(SCNError):
    pass


class TrainingError(SCNError, RuntimeError):
    pass
