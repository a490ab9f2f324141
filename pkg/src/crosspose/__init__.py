"""Cross-domain adaptation toolkit for heatmap keypoint estimation.

Adversarial domain-confusion training over mixed human/animal batches,
a self-paced pseudo-label curriculum for unlabeled target species, and
the annotation, synthetic-data, and OKS/mAP evaluation tooling needed to
run desk-scale adaptation experiments end to end.
"""

from .core import (
    Keypoint, Pose, Instance, HeatmapStack, SkeletonSchema,
    encode_heatmaps, decode_heatmaps,
    VIS_ABSENT, VIS_OCCLUDED, VIS_VISIBLE,
)
from .network import Model, ModelConfig, build, gradient_groups, save_checkpoint, load_checkpoint
from .losses import LossConfig, ddl, pose_loss, wscda_loss, pplo_target_loss, adversarial_step

__version__ = "0.1.0"
