"""Linear auto-regressive model trained by mini-batch gradient descent.

A model of order ``n`` predicts a target from a history window of ``n`` past
values::

    target = b0 + b1 * window[0] + ... + bn * window[n-1]

where ``window[0]`` is the nearest past term.  The window is built by
:func:`insitu_ar.sampling.windows_from_batch`; for the spatial axis entry ``i``
holds ``V(l - (i+1), t - lag)``.

Coefficients are always stored in raw (unscaled) units.  Scaling only acts as a
preconditioner inside :func:`train_step`: each batch is divided by a decaying
running max-abs statistic so that batches whose magnitudes differ by orders of
magnitude take comparably sized steps.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import DimensionError, DivergenceError, UsageError

CHECKPOINT_SCHEMA = "insitu-ar/model@1"
REL_ERROR_FLOOR = 1e-12


@dataclass
class ARModel:
    order_n: int = 3
    lag: int = 50
    learning_rate: float = 1e-2
    coeffs: np.ndarray = None
    steps_trained: int = 0
    last_batch_loss: float = 0.0
    scale: float = 0.0
    scale_decay: float = 0.9
    normalize: bool = True

    def __post_init__(self):
        if self.order_n < 1:
            raise UsageError(f"order_n must be >= 1, got {self.order_n}")
        if self.lag < 0:
            raise UsageError(f"lag must be >= 0, got {self.lag}")
        if not self.learning_rate >= 0:
            raise UsageError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.scale_decay <= 1.0:
            raise UsageError(f"scale_decay must lie in [0, 1], got {self.scale_decay}")
        if self.coeffs is None:
            self.coeffs = np.zeros(self.order_n + 1)
        else:
            self.coeffs = np.array(self.coeffs, dtype=np.float64)
        if self.coeffs.shape != (self.order_n + 1,):
            raise DimensionError(
                f"coeffs must have {self.order_n + 1} entries, got {self.coeffs.shape}")

    @property
    def intercept(self) -> float:
        return float(self.coeffs[0])

    @property
    def trained(self) -> bool:
        return self.steps_trained > 0

    def __eq__(self, other):
        if not isinstance(other, ARModel):
            return NotImplemented
        return (
            self.order_n == other.order_n
            and self.lag == other.lag
            and self.learning_rate == other.learning_rate
            and np.array_equal(self.coeffs, other.coeffs)
            and self.steps_trained == other.steps_trained
            and self.last_batch_loss == other.last_batch_loss
            and self.scale == other.scale
            and self.scale_decay == other.scale_decay
            and self.normalize == other.normalize
        )

    # checkpoint I/O

    def to_dict(self) -> dict:
        return {
            "schema": CHECKPOINT_SCHEMA,
            "order_n": self.order_n,
            "lag": self.lag,
            "learning_rate": self.learning_rate,
            "coeffs": [float(c) for c in self.coeffs],
            "scale": self.scale,
            "scale_decay": self.scale_decay,
            "normalize": self.normalize,
            "steps_trained": self.steps_trained,
            "last_batch_loss": self.last_batch_loss,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "ARModel":
        schema = record.get("schema")
        if schema != CHECKPOINT_SCHEMA:
            raise UsageError(f"unsupported model checkpoint schema {schema!r}")
        return cls(
            order_n=int(record["order_n"]),
            lag=int(record["lag"]),
            learning_rate=float(record["learning_rate"]),
            coeffs=np.asarray(record["coeffs"], dtype=np.float64),
            steps_trained=int(record["steps_trained"]),
            last_batch_loss=float(record["last_batch_loss"]),
            scale=float(record["scale"]),
            scale_decay=float(record.get("scale_decay", 0.9)),
            normalize=bool(record.get("normalize", True)),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def loads(cls, text: str) -> "ARModel":
        return cls.from_dict(json.loads(text))


def _check_window(model: ARModel, window) -> np.ndarray:
    w = np.asarray(window, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != model.order_n:
        raise DimensionError(
            f"window length {w.shape[0] if w.ndim == 1 else w.shape} "
            f"does not match order_n={model.order_n}")
    if not np.all(np.isfinite(w)):
        raise UsageError("window contains non-finite values")
    return w


def as_arrays(batch, order_n: int) -> tuple[np.ndarray, np.ndarray]:
    """Turn a pair collection into ``(windows, targets)`` arrays.

    Accepts anything with ``windows``/``targets`` attributes (such as
    :class:`insitu_ar.sampling.Pairs`) or an iterable of ``(window, target)``.
    """
    if hasattr(batch, "windows") and hasattr(batch, "targets"):
        X = np.asarray(batch.windows, dtype=np.float64)
        y = np.asarray(batch.targets, dtype=np.float64)
    else:
        items = list(batch)
        if not items:
            X = np.empty((0, order_n))
            y = np.empty(0)
        else:
            X = np.array([np.asarray(w, dtype=np.float64) for w, _ in items])
            y = np.array([float(t) for _, t in items])
    if X.ndim != 2 or (X.shape[0] and X.shape[1] != order_n):
        raise DimensionError(f"windows must have {order_n} columns, got shape {X.shape}")
    return X.reshape(-1, order_n), y


def predict(model: ARModel, window) -> float:
    """One-step prediction from a single history window."""
    w = _check_window(model, window)
    return float(model.coeffs[0] + model.coeffs[1:] @ w)


def predict_many(model: ARModel, windows) -> np.ndarray:
    X = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    if X.shape[1] != model.order_n:
        raise DimensionError(f"windows must have {model.order_n} columns, got shape {X.shape}")
    return np.asarray(kernels.predict_many(model.coeffs, X))


def batch_scale(model: ARModel, X: np.ndarray, y: np.ndarray) -> float:
    """Scale that :func:`train_step` would use for this batch."""
    if not model.normalize:
        return 1.0
    peak = max(float(np.max(np.abs(X), initial=0.0)), float(np.max(np.abs(y), initial=0.0)))
    scale = max(peak, model.scale_decay * model.scale)
    return scale if scale > 0.0 else 1.0


def batch_objective(model: ARModel, batch, scale: float | None = None) -> float:
    """Half mean squared error of ``batch`` in scaled space.

    The objective is a function of the scaled parameters
    ``[b0 / scale, b1, ..., bn]``; :func:`batch_gradient` is its gradient.
    """
    X, y = as_arrays(batch, model.order_n)
    s = batch_scale(model, X, y) if scale is None else scale
    mse, _ = kernels.batch_gradient(model.coeffs, X, y, s)
    return 0.5 * mse


def batch_gradient(model: ARModel, batch, scale: float | None = None) -> np.ndarray:
    X, y = as_arrays(batch, model.order_n)
    s = batch_scale(model, X, y) if scale is None else scale
    _, grad = kernels.batch_gradient(model.coeffs, X, y, s)
    return np.asarray(grad)


def train_step(model: ARModel, batch) -> tuple[ARModel, float]:
    """One full-batch gradient-descent step; returns the new model and batch loss.

    The reported loss is the pre-update mean squared error in scaled units.
    Raises :class:`DivergenceError` when the loss or the updated coefficients
    stop being finite.
    """
    X, y = as_arrays(batch, model.order_n)
    if X.shape[0] == 0:
        raise UsageError("train_step needs a non-empty batch")
    scale = batch_scale(model, X, y)
    coeffs, loss = kernels.gd_step(model.coeffs, X, y, model.learning_rate, scale)
    coeffs = np.asarray(coeffs)
    if not (math.isfinite(loss) and np.all(np.isfinite(coeffs))):
        raise DivergenceError(
            f"training diverged at step {model.steps_trained + 1} "
            f"(learning_rate={model.learning_rate})",
            learning_rate=model.learning_rate,
            step_index=model.steps_trained + 1,
        )
    updated = replace(
        model,
        coeffs=coeffs,
        steps_trained=model.steps_trained + 1,
        last_batch_loss=float(loss),
        scale=scale if model.normalize else model.scale,
    )
    return updated, float(loss)


def _forward(model: ARModel, seed_window, steps: int) -> np.ndarray:
    w = _check_window(model, seed_window)
    if steps < 1:
        raise UsageError(f"steps must be >= 1, got {steps}")
    out = kernels.forward_many(model.coeffs, w[None, :], steps)[0]
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        raise DivergenceError(
            f"forwarding produced a non-finite value at step {int(bad[0]) + 1}",
            step_index=int(bad[0]) + 1)
    return np.asarray(out)


def forward_space(model: ARModel, seed_window, steps: int) -> np.ndarray:
    """Predict ``V(l+1), V(l+2), ...`` by feeding each prediction back in.

    ``seed_window`` holds ``[V(l), V(l-1), ..., V(l-n+1)]``.
    """
    return _forward(model, seed_window, steps)


def forward_time(model: ARModel, seed_window, steps: int) -> np.ndarray:
    """Same recursion as :func:`forward_space` with the rolling index read as time."""
    return _forward(model, seed_window, steps)


def forward_many(model: ARModel, seeds: np.ndarray, steps: int) -> np.ndarray:
    """Vectorised forwarding of many seed windows; returns ``(len(seeds), steps)``."""
    seeds = np.asarray(seeds, dtype=np.float64)
    if seeds.ndim != 2 or seeds.shape[1] != model.order_n:
        raise DimensionError(f"seeds must have shape (m, {model.order_n}), got {seeds.shape}")
    out = np.asarray(kernels.forward_many(model.coeffs, seeds, steps))
    if not np.all(np.isfinite(out)):
        col = int(np.flatnonzero(~np.all(np.isfinite(out), axis=0))[0])
        raise DivergenceError(
            f"forwarding produced a non-finite value at step {col + 1}", step_index=col + 1)
    return out


def relative_errors(pred, target, floor: float = REL_ERROR_FLOOR) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return np.abs(pred - target) / np.maximum(np.abs(target), floor)


def holdout_error(model: ARModel, eval_set, floor: float = REL_ERROR_FLOOR) -> float:
    """Mean relative one-step error over ``eval_set``."""
    X, y = as_arrays(eval_set, model.order_n)
    if X.shape[0] == 0:
        raise UsageError("holdout_error needs a non-empty evaluation set")
    pred = kernels.predict_many(model.coeffs, X)
    return float(np.mean(relative_errors(pred, y, floor)))


def least_squares(batch, order_n: int) -> np.ndarray:
    """Closed-form least-squares coefficients for ``batch`` (reference solution)."""
    X, y = as_arrays(batch, order_n)
    A = np.hstack([np.ones((X.shape[0], 1)), X])
    coeffs, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coeffs


def train_until(model: ARModel, batch, *, tol: float = 1e-8, max_steps: int = 100_000):
    """Repeat :func:`train_step` on one batch until the loss drops below ``tol``."""
    loss = math.inf
    for _ in range(max_steps):
        model, loss = train_step(model, batch)
        if loss < tol:
            break
    return model, loss
