from .models import (
    NodeDoc,
    BlobRef,
    LdaPolicy,
    DatasetManifest,
    TraceConfig,
    TrainConfig,
    ModelDocument,
    ExperimentConfig,
    MODEL_FORMAT_VERSION,
)

__all__ = [
    "NodeDoc",
    "BlobRef",
    "LdaPolicy",
    "DatasetManifest",
    "TraceConfig",
    "TrainConfig",
    "ModelDocument",
    "ExperimentConfig",
    "MODEL_FORMAT_VERSION",
]
