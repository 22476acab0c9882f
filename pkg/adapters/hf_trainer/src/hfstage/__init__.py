"""Reference trainer for curriculum stage files on real transformer LMs.

The package consumes exactly two outside interfaces: the stage-file
schema (jsonl rows with prompt/target/loss_span plus a sidecar
manifest) and the external-trainer command line

    hfstage-train --stage-file F --epochs N --checkpoint PATH --metrics-out M

It fine-tunes low-rank adapters on a frozen base model, masking loss
outside each row's span, and saves a continuable checkpoint so that
driving stages in order threads one adapter through the curriculum.
"""

__version__ = "0.1.0"

from .errors import AdapterError, StageSchemaError
from .train import AdapterConfig, run_stage_training

__all__ = ["AdapterConfig", "AdapterError", "StageSchemaError", "run_stage_training"]
