"""Token clustering transformer: dynamic vision tokens merged by density-peaks
clustering, with importance-weighted merging and a token-aggregation decoder.

The heavy lifting lives in the C++ core; this package exposes the main
operations: standalone clustering, dataset generation, model construction,
forward passes, training on the synthetic keypoint task, and gradient checks.
"""

from tcformer._core import (
    InvalidInputError,
    Model,
    MissingArtifactError,
    NumericError,
    cluster,
    evaluate_pck,
    generate_dataset,
    grad_check,
    train_synthetic,
)

__all__ = [
    "Model",
    "cluster",
    "evaluate_pck",
    "generate_dataset",
    "grad_check",
    "train_synthetic",
    "InvalidInputError",
    "MissingArtifactError",
    "NumericError",
]
