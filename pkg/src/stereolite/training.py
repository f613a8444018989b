"""Toy training: overfit one synthetic stereo pair.

This is a correctness probe for the whole gradient path, not a trainer: a
random texture is shifted by a constant integer disparity, and the model
must drive the end-point error on that single pair below 1 px.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import OptimState, adam_step, backward
from .kernels import check
from .metrics import epe
from .network import DisparityMap, ModelConfig, StereoModel, training_loss


def synthetic_pair(rng, height, width, d0, channels=3):
    """Random left texture, right view shifted so ground truth is d0.

    A left pixel at column x matches the right image at column x - d0, so
    the right view copies the left texture shifted left by d0; the last d0
    right columns and the first d0 left columns have no counterpart (the
    mask excludes the latter).
    """
    check(0 < d0 < width, f"disparity {d0} out of range for width {width}")
    left = rng.random((1, channels, height, width), dtype=np.float32)
    right = np.empty_like(left)
    right[..., : width - d0] = left[..., d0:]
    right[..., width - d0:] = rng.random(
        (1, channels, height, d0), dtype=np.float32)
    values = np.full((1, height, width), float(d0), dtype=np.float32)
    mask = np.zeros((1, height, width), dtype=bool)
    mask[..., d0:] = True
    return left, right, DisparityMap(values, mask)


@dataclass
class ToyResult:
    steps: int
    final_epe: float
    epe_trajectory: list = field(default_factory=list)  # (step, epe) pairs
    converged: bool = False


def toy_overfit(config: ModelConfig = None, steps=400, seed=0, d0=8,
                height=16, width=32, lr=1e-3, target_epe=1.0,
                log=None, eval_every=10, model=None) -> ToyResult:
    """Train on one synthetic pair until EPE < target or the step budget ends.

    Deterministic for a fixed seed: data, init and optimizer all derive from
    it.  Returns the trajectory of (step, epe) measurements.
    """
    config = ModelConfig.preset("micro") if config is None else config
    rng = np.random.default_rng(seed)
    left, right, gt = synthetic_pair(rng, height, width, d0)
    model = StereoModel(config, seed=seed) if model is None else model
    state = OptimState(params=list(model.named_parameters()), lr=lr)

    result = ToyResult(steps=0, final_epe=float("inf"))

    def measure(step):
        pred = model.predict(left, right)
        value = epe(DisparityMap(pred.values, gt.valid_mask), gt)
        result.epe_trajectory.append((step, value))
        if log:
            log(f"step {step:4d}  epe {value:8.4f}  lr {state.current_lr:.2e}")
        return value

    measure(0)
    for step in range(1, steps + 1):
        model.train(True)
        model.zero_grad()
        maps = model.forward(left, right, train=True)
        loss = training_loss(maps, gt, config.aux_weights)
        backward(loss)
        adam_step(state)
        result.steps = step
        if step % eval_every == 0 or step == steps:
            value = measure(step)
            result.final_epe = value
            if value < target_epe:
                result.converged = True
                break
    else:
        result.final_epe = result.epe_trajectory[-1][1]
        result.converged = result.final_epe < target_epe
    return result, model
