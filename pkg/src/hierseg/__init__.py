"""Weakly supervised pulmonary-segment losses driven by the segment/lobe hierarchy."""

from .anatomy import (
    AnatomyHierarchy,
    ConsistencyError,
    RegionPartition,
    derive_regions,
    hierarchy,
    lobe_consistency,
    lobe_probability,
    lobes_of_segments,
)
from .losses import LossBreakdown, LossConfig, fsl_loss, total_loss, total_loss_and_grad
from .metrics import count_holes, mapped_dice
from .optimizer import OptimizeConfig, grad_check, optimize_logits
from .phantom import PhantomSpec, generate_phantom, synthesize_gt_by_distance
from .volume import LabelVolume, ProbabilityField, ScalarField4D, read_svol, write_svol

__all__ = [
    "AnatomyHierarchy", "ConsistencyError", "RegionPartition", "derive_regions", "hierarchy",
    "lobe_consistency", "lobe_probability", "lobes_of_segments",
    "LossBreakdown", "LossConfig", "fsl_loss", "total_loss", "total_loss_and_grad",
    "count_holes", "mapped_dice",
    "OptimizeConfig", "grad_check", "optimize_logits",
    "PhantomSpec", "generate_phantom", "synthesize_gt_by_distance",
    "LabelVolume", "ProbabilityField", "ScalarField4D", "read_svol", "write_svol",
]
