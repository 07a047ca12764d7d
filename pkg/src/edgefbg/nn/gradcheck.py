"""Central finite-difference verification of the autodiff backward pass.

Checks run in float64: truncation error of the centered stencil is
O(h^2) and roundoff is O(eps/h), so h around 1e-4 to 1e-5 per unit scale
puts both far below the 1e-6 relative-error gate. Instances are kept
tiny (a handful of elements per tensor) so a full multi-op suite stays
in CPU seconds.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .layers import BatchNorm1d, Conv1d, Dense
from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm error scaled by the combined magnitude of both gradients."""
    num = np.max(np.abs(analytic - numeric))
    den = np.max(np.abs(analytic)) + np.max(np.abs(numeric)) + 1e-300
    return float(num / den)


def numeric_gradient(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-4) -> np.ndarray:
    """Elementwise centered differences of the scalar fn with respect to t."""
    flat = t.data.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        step = h * max(1.0, abs(orig))
        flat[i] = orig + step
        f_plus = fn().item()
        flat[i] = orig - step
        f_minus = fn().item()
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * step)
    return grad.reshape(t.data.shape)


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                    h: float = 1e-4) -> float:
    """Worst relative error between analytic and numeric gradients.

    ``fn`` must rebuild the graph from ``tensors`` on every call and
    return a scalar; it must be deterministic (fix any rng inside).
    """
    for t in tensors:
        if t.data.dtype != np.float64:
            raise ValueError("gradient checks require float64 tensors")
        t.grad = None
    fn().backward()
    analytic = []
    for t in tensors:
        if t.grad is None:
            raise ValueError(f"no gradient reached tensor {t.name or t.shape}")
        analytic.append(t.grad.copy())
    with T.no_grad():
        worst = 0.0
        for t, ag in zip(tensors, analytic):
            ng = numeric_gradient(fn, t, h)
            worst = max(worst, relative_error(ag, ng))
    return worst


# -- the op suite -------------------------------------------------------------


def _t(rng, *shape, lo=-2.0, hi=2.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _probe(rng, builder) -> Callable[[], Tensor]:
    """Scalarize an op through a fixed random projection.

    Symmetric reductions like mean-of-squares can make an op's true input
    gradient nearly vanish (batch norm is the worst case), which turns the
    relative error into pure roundoff; a random linear functional keeps
    the gradient generic.
    """
    shape = builder().data.shape
    r = Tensor(rng.normal(size=shape))
    return lambda: (builder() * r).sum()


def _spread_windows(rng, shape, window: int) -> Tensor:
    """Pool input whose per-window values stay > 1e-2 apart, so a finite
    difference step cannot flip an argmax."""
    while True:
        data = rng.uniform(-2.0, 2.0, size=shape)
        pad = (-shape[-1]) % window
        padded = np.pad(data, [(0, 0)] * (len(shape) - 1) + [(0, pad)],
                        constant_values=-np.inf)
        win = padded.reshape(*shape[:-1], -1, window)
        top2 = np.sort(win, axis=-1)[..., -2:]
        gap = top2[..., 1] - top2[..., 0]
        if np.all(gap[np.isfinite(gap)] > 1e-2):
            return Tensor(data, requires_grad=True)


def _instance_conv1d(rng):
    x = _t(rng, 2, 3, 7)
    layer = Conv1d(3, 4, 4, rng, dtype=np.float64)
    fn = _probe(rng, lambda: T.conv1d(x, layer.weight, layer.bias))
    return fn, [x, layer.weight, layer.bias]


def _instance_dense(rng):
    x = _t(rng, 3, 5)
    layer = Dense(5, 4, rng, dtype=np.float64)
    fn = _probe(rng, lambda: layer(x))
    return fn, [x, layer.weight, layer.bias]


def _instance_sigmoid(rng):
    x = _t(rng, 4, 6, lo=-4.0, hi=4.0)
    fn = _probe(rng, lambda: x.sigmoid())
    return fn, [x]


def _instance_maxpool1d(rng):
    x = _spread_windows(rng, (2, 3, 7), 2)
    fn = _probe(rng, lambda: T.maxpool1d(x, 2))
    return fn, [x]


def _instance_batchnorm_train(rng):
    x = _t(rng, 4, 3, 5)
    layer = BatchNorm1d(3, dtype=np.float64)
    layer.gamma.data = rng.uniform(0.5, 1.5, size=3)
    layer.beta.data = rng.uniform(-0.5, 0.5, size=3)
    layer.train()
    fn = _probe(rng, lambda: layer(x))
    return fn, [x, layer.gamma, layer.beta]


def _instance_batchnorm_eval(rng):
    x = _t(rng, 3, 4)
    layer = BatchNorm1d(4, dtype=np.float64)
    layer.gamma.data = rng.uniform(0.5, 1.5, size=4)
    layer.beta.data = rng.uniform(-0.5, 0.5, size=4)
    layer.running_mean[...] = rng.uniform(-1.0, 1.0, size=4)
    layer.running_var[...] = rng.uniform(0.5, 2.0, size=4)
    layer.eval()
    fn = _probe(rng, lambda: layer(x))
    return fn, [x, layer.gamma, layer.beta]


def _instance_euclid_dist(rng):
    a = _t(rng, 3, 4)
    b = Tensor(a.data + rng.uniform(0.5, 1.5, size=(3, 4)), requires_grad=True)
    fn = _probe(rng, lambda: T.euclid_dist(a, b))
    return fn, [a, b]


def _instance_dropout(rng):
    x = _t(rng, 3, 6)
    seed = int(rng.integers(2**31))
    fn = _probe(rng, lambda: T.dropout(x, 0.4, np.random.default_rng(seed)))
    return fn, [x]


def _instance_huber_mod(rng):
    from ..optim import huber_mod

    delta = float(rng.uniform(0.5, 3.0))
    # keep residuals off the knee so the finite difference stays one-branch
    a = _t(rng, 4, 5, lo=-4.0, hi=4.0)
    a.data[np.abs(np.abs(a.data) - delta) < 0.05] += 0.1
    fn = _probe(rng, lambda: huber_mod(a, delta))
    return fn, [a]


def _instance_contrastive(rng):
    from ..optim import contrastive

    y_true = (rng.random(6) < 0.5).astype(np.float64)
    margin = 0.5
    y = _t(rng, 6, lo=0.01, hi=0.99)
    # keep predictions off the margin hinge
    y.data[np.abs(y.data - margin) < 0.05] += 0.1
    fn = _probe(rng, lambda: contrastive(y_true, y, margin))
    return fn, [y]


def _instance_composite_loss(rng):
    from ..optim import CompositeLossParams, composite_loss

    params = CompositeLossParams(alpha=0.7, margin=0.5, delta=1.0)
    y_true = (rng.random(4) < 0.5).astype(np.float64)
    y_pred = _t(rng, 4, lo=0.01, hi=0.99)
    y_pred.data[np.abs(y_pred.data - params.margin) < 0.05] += 0.1
    y_a = _t(rng, 4, 6)
    y_b = _t(rng, 4, 6)
    targets_a = rng.uniform(-2.0, 2.0, size=(4, 6))
    targets_b = rng.uniform(-2.0, 2.0, size=(4, 6))
    for pred, tgt in ((y_a, targets_a), (y_b, targets_b)):
        res = np.abs(np.abs(pred.data - tgt) - params.delta)
        pred.data[res < 0.05] += 0.1
    fn = lambda: composite_loss(y_true, y_pred, targets_a, y_a, targets_b, y_b, params)
    return fn, [y_pred, y_a, y_b]


OP_INSTANCES: dict[str, Callable] = {
    "conv1d": _instance_conv1d,
    "dense": _instance_dense,
    "sigmoid": _instance_sigmoid,
    "maxpool1d": _instance_maxpool1d,
    "batchnorm1d_train": _instance_batchnorm_train,
    "batchnorm1d_eval": _instance_batchnorm_eval,
    "euclid_dist": _instance_euclid_dist,
    "dropout": _instance_dropout,
    "huber_mod": _instance_huber_mod,
    "contrastive": _instance_contrastive,
    "composite_loss": _instance_composite_loss,
}


def run_suite(n_instances: int = 20, seed: int = 0) -> dict[str, float]:
    """Worst relative gradient error per op over fresh random instances."""
    results = {}
    for op_index, (name, builder) in enumerate(OP_INSTANCES.items()):
        rng = np.random.default_rng([seed, op_index])
        worst = 0.0
        for _ in range(n_instances):
            fn, tensors = builder(rng)
            worst = max(worst, check_gradients(fn, tensors))
        results[name] = worst
    return results
