"""Semantic neural LiDAR fields over range images."""

from ._core import (
    ConfigError,
    DataError,
    NumericError,
    SensorIntrinsics,
    angles_to_direction,
    chamfer,
    config_reference,
    evaluate,
    f_score,
    image_metrics,
    pixel_to_angles,
    point_to_pixel,
    project_cloud,
    raydrop_metrics,
    render,
    segmentation_metrics,
    synth_dataset,
    train,
    unproject,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "SensorIntrinsics",
    "angles_to_direction",
    "chamfer",
    "config_reference",
    "evaluate",
    "f_score",
    "image_metrics",
    "pixel_to_angles",
    "point_to_pixel",
    "project_cloud",
    "raydrop_metrics",
    "render",
    "segmentation_metrics",
    "synth_dataset",
    "train",
    "unproject",
]

__version__ = "0.1.0"
