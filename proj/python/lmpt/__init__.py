"""Landmark detection on bone surface point clouds."""

from ._lmpt import (
    LmptError,
    Model,
    aggregate_mae,
    consolidate_annotations,
    default_thresholds,
    gradcheck,
    knn,
    landmark_errors,
    load_shape,
    medoid,
    normalize,
    pck_curve,
    run_cli,
    serialize_order,
    subsample,
    synth_generate,
)

__all__ = [
    "LmptError",
    "Model",
    "aggregate_mae",
    "consolidate_annotations",
    "default_thresholds",
    "gradcheck",
    "knn",
    "landmark_errors",
    "load_shape",
    "medoid",
    "normalize",
    "pck_curve",
    "run_cli",
    "serialize_order",
    "subsample",
    "synth_generate",
]
