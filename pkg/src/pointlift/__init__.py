"""Annotation-free 3D segmentation toolkit.

Pipeline stages: synthetic scene generation, camera-LiDAR projection and
pseudo-labeling, superpixel/superpoint correspondence, tri-modal contrastive
pre-training of a toy projection head, and non-parametric label propagation
along approximately flat structures.
"""

from .io_formats import (
    UNLABELED,
    FormatError,
    SceneBundle,
    Mask,
    MaskSet,
    read_bundle,
    write_bundle,
    read_teacher,
    write_teacher,
    read_labels,
    write_labels,
)
from .projection import CalibratedCamera, PixelHits, project, pseudo_labels, fov_mask
from .classdict import ClassDictionary, semi_positive_weights
from .correspondence import Correspondence, build, pool_superpoints
from .tmp import TmpBatch, LossReport, loss_ip, loss_tp, loss_tmp, train_toy_head
from .afi import (
    AfiConfig,
    fibonacci_lattice,
    coverage_sample,
    clear_confused,
    afi,
)
from .synth import SynthSpec, generate_scene, generate_teacher, default_dictionary
from .evaluate import ConfusionMatrix, confusion, miou, iou_from_counts

__all__ = [
    "UNLABELED",
    "FormatError",
    "SceneBundle",
    "Mask",
    "MaskSet",
    "read_bundle",
    "write_bundle",
    "read_teacher",
    "write_teacher",
    "read_labels",
    "write_labels",
    "CalibratedCamera",
    "PixelHits",
    "project",
    "pseudo_labels",
    "fov_mask",
    "ClassDictionary",
    "semi_positive_weights",
    "Correspondence",
    "build",
    "pool_superpoints",
    "TmpBatch",
    "LossReport",
    "loss_ip",
    "loss_tp",
    "loss_tmp",
    "train_toy_head",
    "AfiConfig",
    "fibonacci_lattice",
    "coverage_sample",
    "clear_confused",
    "afi",
    "SynthSpec",
    "generate_scene",
    "generate_teacher",
    "default_dictionary",
    "ConfusionMatrix",
    "confusion",
    "miou",
    "iou_from_counts",
]
