"""stereolite: light 2D/3D stereo disparity networks on a from-scratch
numpy autodiff engine, with an exact MACs/params cost model."""

from .autodiff import OptimState, adam_step, backward, gradcheck
from .costmodel import (LayerCost, block_cost, expansion_sweep,
                        instrumented_count, network_cost, reduction_factor)
from .metrics import MetricReport, d1, epe, evaluate, px_k
from .network import DisparityMap, ModelConfig, StereoModel, training_loss
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "DisparityMap", "LayerCost", "MetricReport", "ModelConfig", "OptimState",
    "StereoModel", "Tensor", "adam_step", "backward", "block_cost", "d1",
    "epe", "evaluate", "expansion_sweep", "gradcheck", "instrumented_count",
    "network_cost", "no_grad", "px_k", "reduction_factor", "training_loss",
]
