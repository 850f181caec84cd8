"""Knowledge-graph-grounded pathology reasoning: graph fusion, path retrieval,
triplet synthesis and filtering, trajectory-masked SFT data, composite rewards
and group-relative policy optimization."""

from . import corpus, grpo, kg, metrics, prompts, reasoning, rewards, services, synthesis  # noqa: F401  (registers mock rules)
from .errors import PathforgeError, ServiceError, ValidationError

__version__ = "0.1.0"

__all__ = ["PathforgeError", "ServiceError", "ValidationError", "__version__"]
