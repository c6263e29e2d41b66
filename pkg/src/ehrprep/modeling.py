"""Design-matrix shaping, cross-validation splits, oversampling and a logistic-regression baseline."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


class Shaping(str, Enum):
    CONCAT = "Concat"
    AGGREGATE = "Aggregate"


def shape(tensors, labels=None, mode: Shaping | str = Shaping.CONCAT):
    """Stack sample tensors into an (n_samples, n_columns) matrix.

    Concat flattens the time grid time-major (all features of bin 0, then bin
    1, ...); Aggregate averages each feature over time. Static and demographic
    columns follow the dynamic block.
    """
    mode = Shaping(mode)
    if not tensors:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    grid_shape = tensors[0].dynamic.shape
    rows = []
    for t in tensors:
        if t.dynamic.shape != grid_shape or t.static.shape != tensors[0].static.shape:
            raise DataError(f"sample {t.sample_id}: grid {t.dynamic.shape} differs from {grid_shape}")
        dyn = t.dynamic.reshape(-1) if mode is Shaping.CONCAT else t.dynamic.mean(axis=0)
        rows.append(np.concatenate([dyn, t.static.astype(np.float64), t.demographic]))
    X = np.vstack(rows)
    y = np.zeros(0, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    return X, y


def kfold_split(n_samples: int, k: int, seed: int) -> list[np.ndarray]:
    """Partition ``range(n_samples)`` into ``k`` shuffled folds whose sizes differ by at most one."""
    if k < 2:
        raise ConfigError(f"k-fold needs k >= 2, got {k}")
    if k > n_samples:
        raise DataError(f"cannot split {n_samples} samples into {k} folds")
    order = np.random.default_rng(seed).permutation(n_samples)
    return [np.sort(fold) for fold in np.array_split(order, k)]


def oversample_minority(indices, labels, seed: int) -> np.ndarray:
    """Duplicate minority-class indices at random (with replacement) until both classes are equal.

    ``labels`` is aligned with ``indices``. The original indices come first,
    followed by the drawn duplicates.
    """
    indices = np.asarray(indices)
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) != 2:
        raise DataError("oversampling needs both classes present")
    minority = classes[np.argmin(counts)]
    deficit = counts.max() - counts.min()
    pool = indices[labels == minority]
    extra = np.random.default_rng(seed).choice(pool, size=deficit, replace=True)
    return np.concatenate([indices, extra])


def sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def loss_and_grad(weights, X, y, l2: float):
    """L2-regularized mean binary cross-entropy and its gradient.

    ``weights`` has one entry per column plus a trailing bias; the bias is
    not regularized.
    """
    w, b = weights[:-1], weights[-1]
    z = X @ w + b
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * np.dot(w, w)
    residual = (sigmoid(z) - y) / len(y)
    grad = np.empty_like(weights)
    grad[:-1] = X.T @ residual + l2 * w
    grad[-1] = residual.sum()
    return loss, grad


@dataclass
class LogisticRegression:
    learning_rate: float = 0.1
    epochs: int = 300
    l2: float = 0.01
    patience: int = 5
    validation_fraction: float = 0.1
    seed: int = 0
    weights: Optional[np.ndarray] = field(default=None, repr=False)
    mean_: Optional[np.ndarray] = field(default=None, repr=False)
    scale_: Optional[np.ndarray] = field(default=None, repr=False)
    history: list = field(default_factory=list, repr=False)

    def _standardize(self, X):
        return (X - self.mean_) / self.scale_

    def fit(self, X, y, sample_index=None):
        """Full-batch gradient descent with early stopping on a held-out validation slice.

        ``sample_index`` optionally selects (possibly repeated) rows of ``X``
        to train on, e.g. an oversampled index set. Standardization statistics
        come from the distinct training rows only.
        """
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if not np.all(np.isfinite(X)):
            raise DataError("design matrix contains non-finite values")
        idx = np.arange(len(X)) if sample_index is None else np.asarray(sample_index)
        distinct = np.unique(idx)
        self.mean_ = X[distinct].mean(axis=0)
        scale = X[distinct].std(axis=0)
        self.scale_ = np.where(scale > 0, scale, 1.0)
        Xs = self._standardize(X)

        rng = np.random.default_rng(self.seed)
        n_val = int(round(self.validation_fraction * len(distinct)))
        val_rows = rng.choice(distinct, size=n_val, replace=False) if n_val and len(distinct) > n_val else np.array([], dtype=int)
        train_idx = idx[~np.isin(idx, val_rows)]
        Xt, yt = Xs[train_idx], y[train_idx]
        Xv, yv = Xs[val_rows], y[val_rows]

        w = np.zeros(X.shape[1] + 1)
        best_w, best_val, stale = w.copy(), np.inf, 0
        self.history = []
        for _ in range(self.epochs):
            loss, grad = loss_and_grad(w, Xt, yt, self.l2)
            if not np.isfinite(loss):
                raise DataError(f"training diverged: loss={loss}, |grad|={np.linalg.norm(grad)}, "
                                f"learning_rate={self.learning_rate}")
            w = w - self.learning_rate * grad
            if len(val_rows):
                val_loss, _ = loss_and_grad(w, Xv, yv, 0.0)
                self.history.append((loss, val_loss))
                if val_loss < best_val - 1e-12:
                    best_w, best_val, stale = w.copy(), val_loss, 0
                else:
                    stale += 1
                    if stale >= self.patience:
                        break
            else:
                self.history.append((loss, None))
                best_w = w
        self.weights = best_w
        return self

    def predict_proba(self, X) -> np.ndarray:
        if self.weights is None:
            raise RuntimeError("model is not fitted")
        Xs = self._standardize(np.asarray(X, dtype=np.float64))
        return sigmoid(Xs @ self.weights[:-1] + self.weights[-1])


def cross_validate(X, y, make_model: Callable[[int], LogisticRegression], k: int, seed: int,
                   oversample: bool = True, warnings: Optional[list] = None) -> np.ndarray:
    """Out-of-fold probabilities for every sample.

    Oversampling touches training folds only; a training fold holding a single
    class is fitted without it.
    """
    y = np.asarray(y)
    scores = np.zeros(len(y))
    for i, test in enumerate(kfold_split(len(y), k, seed)):
        train = np.setdiff1d(np.arange(len(y)), test)
        index = train
        if oversample:
            if len(np.unique(y[train])) == 2:
                index = oversample_minority(train, y[train], seed + 1000 + i)
            elif warnings is not None:
                warnings.append(f"fold {i}: single-class training fold, oversampling skipped")
        model = make_model(seed + i).fit(X, y, sample_index=index)
        scores[test] = model.predict_proba(X[test])
    return scores
