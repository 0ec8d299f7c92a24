"""Exception types shared across the package."""


class FacedetError(Exception):
    """Base class for package-level failures."""


class ConfigError(FacedetError):
    """Invalid configuration value or malformed config file."""


class TrainingDiverged(FacedetError):
    """Loss exploded or a non-finite gradient appeared during training."""
