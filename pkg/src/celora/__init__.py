"""Federated tri-factor LoRA simulator: adapters, similarity-driven
personalized aggregation, communication accounting, and a gradient-leakage
evaluation harness."""

__version__ = "0.1.0"

from .adapter import TriLoRAAdapter, ModelShapeConfig, init_adapter, param_counts

__all__ = [
    "TriLoRAAdapter",
    "ModelShapeConfig",
    "init_adapter",
    "param_counts",
    "__version__",
]
