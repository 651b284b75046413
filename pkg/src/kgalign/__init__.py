"""kgalign: model-agnostic entity alignment between knowledge graphs.

The engine verbalizes entities into text, embeds the texts, retrieves
candidate counterparts, optionally reranks them with a trainable pair scorer,
and turns ranked candidates into one-to-one alignment decisions, with an
evaluation harness and a reproducible pipeline on top.
"""

from .config import PipelineConfig, load_config
from .core import KERNEL_BACKEND
from .errors import KgalignError
from .pipeline import RunOutcome, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "KgalignError",
    "PipelineConfig",
    "RunOutcome",
    "__version__",
    "load_config",
    "run_pipeline",
]
