"""Exception types shared across the package."""


class CeloraError(Exception):
    """Base class for all package-specific errors."""


class InvalidRankError(CeloraError):
    """Adapter rank is not in [1, min(d, k))."""


class ShapeMismatchError(CeloraError):
    """Operand shapes are inconsistent with the adapter or each other."""


class DegenerateKernelError(CeloraError):
    """Self-HSIC vanished; CKA is undefined for this pair."""


class ConfigError(CeloraError):
    """Experiment configuration failed schema validation."""


class PartitionError(CeloraError):
    """Requested partition is infeasible for the dataset."""


class DataError(CeloraError):
    """Dataset loading or validation failure."""
