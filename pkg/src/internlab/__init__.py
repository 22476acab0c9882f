"""Curriculum distillation toolkit.

Builds progressively compressed fine-tuning curricula (knowledge and
demonstration examples decay stage by stage), trains either a bundled
toy model or an external trainer over them, and scores the result with
a knowledge-free exact-match harness.
"""

__version__ = "0.1.0"

from internlab.errors import (
    ConfigError,
    CorpusError,
    CurriculumError,
    InternLabError,
    ScheduleError,
)

__all__ = [
    "__version__",
    "InternLabError",
    "ConfigError",
    "CorpusError",
    "CurriculumError",
    "ScheduleError",
]
