"""Exception types shared across the package."""


class BlendfieldsError(Exception):
    """Base class for package errors."""


class ValidationError(BlendfieldsError):
    """Bad user input: config, checkpoint, dataset, or CLI arguments. CLI exit code 1."""


class CheckpointError(ValidationError):
    """Checkpoint manifest or parameter payload does not match expectations."""


class ProviderError(BlendfieldsError):
    """A segmentation or embedding provider failed or violated its contract."""


class TrainingDivergenceError(BlendfieldsError):
    """Training produced a non-finite loss."""
