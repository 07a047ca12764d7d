"""Loss functions and optimizers.

The Siamese composite loss mixes a contrastive term on the similarity
score with blunted-Huber regression terms on both arms; alpha balances
the two. The Huber variant grows linearly with slope exactly 1 past the
threshold and quadratically below it, with matching value and slope at
the knee.

All three optimizers apply weight decay decoupled from the gradient:
the shrinkage lr*wd*param is subtracted directly and never enters the
momentum or second-moment state.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .nn.tensor import Tensor

# -- losses -------------------------------------------------------------------


def _as_const(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def huber_mod(residual: Tensor, delta: float) -> Tensor:
    """Elementwise blunted Huber: 0.5 a^2/delta inside |a| <= delta, then
    linear 0.5 delta + (|a| - delta) with unit slope outside."""
    if delta <= 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    a = residual.data
    inside = np.abs(a) <= delta
    data = np.where(inside, 0.5 * a * a / delta, 0.5 * delta + np.abs(a) - delta)
    out = Tensor._result(data.astype(a.dtype, copy=False), (residual,))
    if out.requires_grad:
        def backward():
            grad = np.where(inside, a / delta, np.sign(a))
            residual.grad = (
                out.grad * grad if residual.grad is None
                else residual.grad + out.grad * grad
            )
        out._backward = backward
    return out


def contrastive(y_true, y_pred: Tensor, margin: float) -> Tensor:
    """Elementwise (1-y) pred^2 + y max(0, margin - pred)^2 with y in {0,1}.

    Genuine pairs (y=0) are pulled toward zero similarity score, imposter
    pairs (y=1) are pushed past the margin.
    """
    y = np.asarray(y_true, dtype=y_pred.dtype)
    if y.shape != y_pred.data.shape:
        raise ValueError(f"label shape {y.shape} does not match {y_pred.data.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be 0 (genuine) or 1 (imposter)")
    yt = Tensor(y)
    genuine = (1.0 - yt) * y_pred.square()
    imposter = yt * (margin - y_pred).relu().square()
    return genuine + imposter


@dataclass(frozen=True)
class CompositeLossParams:
    """Weights of the Siamese training objective."""

    alpha: float = 0.7
    margin: float = 0.5
    delta: float = 2.2

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.margin <= 0:
            raise ValueError(f"margin must be > 0, got {self.margin}")
        if self.delta <= 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")


def composite_loss(y_true, y_pred: Tensor, targets_a, pred_a: Tensor,
                   targets_b, pred_b: Tensor, params: CompositeLossParams) -> Tensor:
    """Batch mean of alpha * contrastive + (1 - alpha) * both arms' Huber.

    Per-sample Huber terms average over the coordinate axis so alpha's
    balance does not depend on the output dimensionality. ``y_pred`` is
    (B,) or (B, 1); the arm predictions are (B, D) against matching
    ground-truth arrays.
    """
    ta = np.asarray(targets_a, dtype=pred_a.dtype)
    tb = np.asarray(targets_b, dtype=pred_b.dtype)
    if ta.shape != pred_a.data.shape or tb.shape != pred_b.data.shape:
        raise ValueError("arm target shapes do not match predictions")
    score = y_pred.reshape(-1)
    con = contrastive(np.asarray(y_true).reshape(-1), score, params.margin)
    hub_a = huber_mod(pred_a - _as_const(ta, pred_a), params.delta).mean(axis=1)
    hub_b = huber_mod(pred_b - _as_const(tb, pred_b), params.delta).mean(axis=1)
    per_sample = params.alpha * con + (1.0 - params.alpha) * (hub_a + hub_b)
    return per_sample.mean()


def mae(pred: Tensor, target) -> Tensor:
    return (pred - _as_const(target, pred)).abs().mean()


def mse(pred: Tensor, target) -> Tensor:
    return (pred - _as_const(target, pred)).square().mean()


def msle(pred: Tensor, target) -> Tensor:
    """Mean squared log error; inputs must be > -1."""
    t = _as_const(target, pred)
    if np.any(pred.data <= -1.0) or np.any(t.data <= -1.0):
        raise ValueError("msle needs all values > -1")
    return (pred.log1p() - t.log1p()).square().mean()


def huber(pred: Tensor, target, delta: float = 1.0) -> Tensor:
    """Classic Huber: quadratic inside delta, delta*(|a| - 0.5*delta) outside."""
    if delta <= 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    res = pred - _as_const(target, pred)
    a = res.data
    inside = np.abs(a) <= delta
    data = np.where(inside, 0.5 * a * a, delta * (np.abs(a) - 0.5 * delta))
    out = Tensor._result(data.astype(a.dtype, copy=False), (res,))
    if out.requires_grad:
        def backward():
            grad = np.where(inside, a, delta * np.sign(a))
            res.grad = (
                out.grad * grad if res.grad is None else res.grad + out.grad * grad
            )
        out._backward = backward
    return out.mean()


def mape(pred: Tensor, target) -> Tensor:
    """Mean absolute percentage error over nonzero targets.

    Zero-target elements carry no percentage meaning; they are dropped
    from the mean with a warning stating how many were skipped.
    """
    t = np.asarray(target, dtype=pred.dtype)
    nonzero = t != 0.0
    n_zero = int(t.size - nonzero.sum())
    if n_zero:
        warnings.warn(f"mape: excluded {n_zero} zero-target element(s)")
        if n_zero == t.size:
            raise ValueError("mape: every target is zero")
    weight = np.where(nonzero, 1.0 / np.where(nonzero, np.abs(t), 1.0), 0.0)
    scaled = (pred - _as_const(t, pred)).abs() * Tensor(weight.astype(t.dtype))
    return scaled.sum() * (100.0 / float(nonzero.sum()))


def cosine_similarity(pred: Tensor, target) -> Tensor:
    """Negated mean row-wise cosine similarity (a loss: identical rows -> -1)."""
    t = _as_const(target, pred)
    if pred.data.ndim != 2 or t.data.shape != pred.data.shape:
        raise ValueError("cosine similarity expects matching (B, D) inputs")
    dot = (pred * t).sum(axis=1)
    norms = (pred.square().sum(axis=1) * t.square().sum(axis=1) + 1e-24).sqrt()
    return -((dot / norms).mean())


STANDARD_LOSSES = {
    "mae": mae,
    "mse": mse,
    "msle": msle,
    "huber": huber,
    "mape": mape,
    "cosine_similarity": cosine_similarity,
}

# -- optimizers ----------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerConfig:
    """Optimizer selection plus its scalar hyperparameters.

    ``rho`` is the accumulator decay of the squared-gradient average and
    only matters for rmsprop. Weight decay is decoupled for every kind.
    """

    kind: str = "adamw"
    learning_rate: float = 1e-3
    momentum: float = 0.0
    weight_decay: float = 0.0
    rho: float = 0.9

    def __post_init__(self):
        if self.kind not in ("sgdw", "adamw", "rmsprop"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must be in (0, 1), got {self.rho}")

    def build(self, params: list[Tensor]) -> "Optimizer":
        cls = {"sgdw": SGDW, "adamw": AdamW, "rmsprop": RMSprop}[self.kind]
        if self.kind == "sgdw":
            return cls(params, self.learning_rate, self.momentum, self.weight_decay)
        if self.kind == "adamw":
            return cls(params, self.learning_rate, weight_decay=self.weight_decay)
        return cls(params, self.learning_rate, self.momentum, self.rho,
                   self.weight_decay)


class Optimizer:
    """Shared plumbing: parameter list, grad validation, zeroing."""

    def __init__(self, params: list[Tensor], lr: float, weight_decay: float):
        if not params:
            raise ValueError("optimizer needs at least one parameter")
        if lr <= 0:
            raise ValueError(f"lr must be > 0, got {lr}")
        if weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {weight_decay}")
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay

    def _grad(self, i: int, p: Tensor) -> np.ndarray:
        g = p.grad
        if g is None:
            return np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            name = p.name or f"parameter {i}"
            raise ValueError(f"non-finite gradient in {name}")
        return g

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {}


class SGDW(Optimizer):
    """Momentum SGD with decoupled weight decay."""

    def __init__(self, params, lr: float, momentum: float = 0.0,
                 weight_decay: float = 0.0):
        super().__init__(params, lr, weight_decay)
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.momentum = momentum
        self.buf = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for i, p in enumerate(self.params):
            g = self._grad(i, p)
            if self.momentum:
                self.buf[i] *= self.momentum
                self.buf[i] += g
                update = self.buf[i]
            else:
                update = g
            p.data = p.data - self.lr * update - self.lr * self.weight_decay * p.data

    def state_arrays(self):
        return {f"buf.{i}": b for i, b in enumerate(self.buf)}


class AdamW(Optimizer):
    """Adam with bias correction and decoupled weight decay."""

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        super().__init__(params, lr, weight_decay)
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ValueError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = self._grad(i, p)
            self.m[i] *= self.beta1
            self.m[i] += (1.0 - self.beta1) * g
            self.v[i] *= self.beta2
            self.v[i] += (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / c1
            v_hat = self.v[i] / c2
            p.data = (p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
                      - self.lr * self.weight_decay * p.data)

    def state_arrays(self):
        out = {"t": np.array([self.t], dtype=np.float64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m
            out[f"v.{i}"] = v
        return out


class RMSprop(Optimizer):
    """RMSprop with momentum on the normalized gradient and decoupled decay.

    acc = rho * acc + (1 - rho) * g^2
    buf = momentum * buf + g / (sqrt(acc) + eps)
    p  -= lr * buf + lr * wd * p
    """

    def __init__(self, params, lr: float, momentum: float = 0.0, rho: float = 0.9,
                 weight_decay: float = 0.0, eps: float = 1e-7):
        super().__init__(params, lr, weight_decay)
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        if not 0.0 < rho < 1.0:
            raise ValueError(f"rho must be in (0, 1), got {rho}")
        self.momentum = momentum
        self.rho = rho
        self.eps = eps
        self.acc = [np.zeros_like(p.data) for p in self.params]
        self.buf = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for i, p in enumerate(self.params):
            g = self._grad(i, p)
            self.acc[i] *= self.rho
            self.acc[i] += (1.0 - self.rho) * g * g
            scaled = g / (np.sqrt(self.acc[i]) + self.eps)
            if self.momentum:
                self.buf[i] *= self.momentum
                self.buf[i] += scaled
                update = self.buf[i]
            else:
                update = scaled
            p.data = p.data - self.lr * update - self.lr * self.weight_decay * p.data

    def state_arrays(self):
        out = {}
        for i, (a, b) in enumerate(zip(self.acc, self.buf)):
            out[f"acc.{i}"] = a
            out[f"buf.{i}"] = b
        return out
