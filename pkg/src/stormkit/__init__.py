"""stormkit: building blocks for weather-robust segmentation pipelines.

Synthetic weather degradations, scene-balanced sampling plans, a channel
recalibration adapter with verified analytic gradients, multi-frame
probability fusion, segmentation metrics, and checkpoint weight averaging.
"""

__version__ = "0.1.0"

from stormkit.core import (
    IGNORE_INDEX,
    StormkitError,
    derive_rng,
    make_rng,
    read_image_png,
    read_label_png,
    stream_id_for,
    to_f32,
    to_u8,
    write_image_png,
    write_label_png,
)
from stormkit.degrade import (
    CATEGORIES,
    SEVERITIES,
    DegradeConfig,
    DegradeRecord,
    apply_blur,
    apply_dark,
    apply_glare,
    apply_haze,
    apply_snow,
    degrade,
    sample_plan,
)
from stormkit.fusion import argmax_labels, fuse_scene, read_probmap, write_probmap
from stormkit.metrics import accumulate, evaluate_scenes, metrics, miou_from_per_class, new_confusion
from stormkit.recalib import RecalibParams, backward, forward, gradient_check, init_params, param_count
from stormkit.sampler import SceneManifest, SamplePlan, build_plan, plan_stats, read_manifest
from stormkit.soup import CompatibilityError, compat_check, read_archive, soup, write_archive

__all__ = [
    "IGNORE_INDEX",
    "StormkitError",
    "derive_rng",
    "make_rng",
    "stream_id_for",
    "to_f32",
    "to_u8",
    "read_image_png",
    "write_image_png",
    "read_label_png",
    "write_label_png",
    "CATEGORIES",
    "SEVERITIES",
    "DegradeConfig",
    "DegradeRecord",
    "apply_blur",
    "apply_dark",
    "apply_snow",
    "apply_haze",
    "apply_glare",
    "degrade",
    "sample_plan",
    "argmax_labels",
    "fuse_scene",
    "read_probmap",
    "write_probmap",
    "accumulate",
    "evaluate_scenes",
    "metrics",
    "miou_from_per_class",
    "new_confusion",
    "RecalibParams",
    "backward",
    "forward",
    "gradient_check",
    "init_params",
    "param_count",
    "SceneManifest",
    "SamplePlan",
    "build_plan",
    "plan_stats",
    "read_manifest",
    "CompatibilityError",
    "compat_check",
    "read_archive",
    "soup",
    "write_archive",
    "__version__",
]
