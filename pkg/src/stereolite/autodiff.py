"""Reverse-mode differentiation driver, gradient checking and Adam.

The graph recorded by :mod:`stereolite.tensor` ops is the tape: an ordered
set of primitive applications with saved activations captured in each node's
backward closure.  :func:`backward` replays it once in reverse topological
order; parameter gradients accumulate (sum) across calls until zeroed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


def backward(loss, grad=1.0):
    """Propagate d(loss)/d(node) to every reachable tensor with requires_grad.

    ``loss`` must be a scalar.  Gradients add onto any existing ``.grad``.
    """
    if loss.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.accumulate_grad(np.asarray(grad, dtype=loss.dtype).reshape(loss.shape))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params):
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradcheckReport:
    max_rel_error: float
    tol: float
    worst_index: tuple
    checked: int

    @property
    def passed(self):
        return self.max_rel_error < self.tol

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"gradcheck {status}: max rel error {self.max_rel_error:.3e} "
                f"(tol {self.tol:.1e}, {self.checked} coords, "
                f"worst at {self.worst_index})")


def gradcheck(f, x, h=1e-4, tol=1e-5, max_coords=None, rng=None):
    """Compare the analytic gradient of scalar ``f`` at ``x`` against central
    finite differences (f(x+h) - f(x-h)) / 2h, coordinate by coordinate.

    ``x`` should be float64 for meaningful tolerances.  With ``max_coords`` a
    random subset of coordinates is probed (seeded via ``rng``), which keeps
    end-to-end checks tractable.  Always returns a report; never raises on
    mismatch.
    """
    x = Tensor(np.asarray(x.data if isinstance(x, Tensor) else x,
                          dtype=np.float64), requires_grad=True)
    out = f(x)
    if out.size != 1:
        raise ValueError("gradcheck target must return a scalar")
    x.zero_grad()
    backward(out)
    analytic = (x.grad if x.grad is not None else np.zeros_like(x.data)).ravel()

    coords = np.arange(x.size)
    if max_coords is not None and max_coords < x.size:
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        coords = gen.choice(x.size, size=max_coords, replace=False)

    flat = x.data.ravel()
    worst = 0.0
    worst_idx = ()
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(x.data)).item()
        flat[i] = orig - h
        fm = f(Tensor(x.data)).item()
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * h)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        rel = abs(analytic[i] - numeric) / denom
        if rel > worst:
            worst = rel
            worst_idx = np.unravel_index(i, x.shape)
    return GradcheckReport(worst, tol, worst_idx, len(coords))


# ---------------------------------------------------------------------------
# Adam with the halving epoch schedule
# ---------------------------------------------------------------------------

def lr_at_epoch(initial, halve_epochs, epoch):
    """Learning rate after applying every halving milestone <= epoch."""
    halvings = sum(1 for m in halve_epochs if epoch >= m)
    return initial * 0.5 ** halvings


@dataclass
class OptimState:
    """Per-parameter Adam moments plus the step counter and lr schedule."""

    params: list  # (name, Tensor) pairs
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    halve_epochs: tuple = (10, 12, 14, 16)
    step_count: int = 0
    epoch: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params:
            self.m[name] = np.zeros_like(p.data)
            self.v[name] = np.zeros_like(p.data)

    @property
    def current_lr(self):
        return lr_at_epoch(self.lr, self.halve_epochs, self.epoch)


def adam_step(state: OptimState):
    """One bias-corrected Adam update over every registered parameter.

    Parameters with a ``None`` gradient are skipped; NaN/Inf gradients raise
    with the parameter name.
    """
    state.step_count += 1
    t = state.step_count
    lr = state.current_lr
    b1, b2 = state.beta1, state.beta2
    for name, p in state.params:
        g = p.grad
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p.data = (p.data - lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype)
