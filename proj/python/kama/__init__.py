"""Articulates a skinned body model from sparse 3D keypoints."""

from ._kama import (
    Fit,
    KamaError,
    Model,
    __version__,
    fit_keypoints,
    forward_kinematics,
    kama,
    load_fit,
    load_model,
    make_default_model,
    metric_mpjpe,
    metric_mpve,
    metric_pa_mpjpe,
    refine,
    save_model,
    skin_vertices,
    synth,
    write_fit,
    write_obj,
)

__all__ = [
    "Fit",
    "KamaError",
    "Model",
    "__version__",
    "fit_keypoints",
    "forward_kinematics",
    "kama",
    "load_fit",
    "load_model",
    "make_default_model",
    "metric_mpjpe",
    "metric_mpve",
    "metric_pa_mpjpe",
    "refine",
    "save_model",
    "skin_vertices",
    "synth",
    "write_fit",
    "write_obj",
]
