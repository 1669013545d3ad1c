"""RBF support vector machines trained with SMO, one-vs-one for multiclass.

The binary solver works on the standard soft-margin dual

    max  sum(a) - 1/2 sum_ij a_i a_j y_i y_j K(x_i, x_j)
    s.t. 0 <= a_i <= C,  sum(a_i y_i) = 0

picking the maximal-violating pair with second-order working-set selection
(as in libsvm) and updating two multipliers analytically per step.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .evaluation import ConfusionMatrix

FORMAT_TAG = "emofuse-svm/1"
_TAU = 1e-12


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class KernelParams:
    c: float = 1.0
    gamma: float | None = None  # None -> 1 / dimension at training time

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigError(f"C must be > 0, got {self.c}")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")

    def resolved(self, dim: int) -> "KernelParams":
        return self if self.gamma is not None else KernelParams(self.c, 1.0 / dim)


def rbf_kernel(x, z, gamma: float) -> float:
    x, z = np.asarray(x, dtype=float), np.asarray(z, dtype=float)
    if x.shape != z.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {z.shape}")
    d = x - z
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_gram(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """Kernel matrix between the rows of ``a`` and ``b``."""
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class BinaryModel:
    """Decision function ``f(x) = sum(coef_i * K(sv_i, x)) + bias``.

    ``dual_coef`` holds alpha_i * y_i.  Positive f means ``labels[1]``.
    """

    labels: tuple[int, int]
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    params: KernelParams
    converged: bool = True
    iterations: int = 0
    objective_trace: list[float] = field(default_factory=list, repr=False)

    def decision(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.support_vectors.shape[1],):
            raise ValueError(
                f"dimension mismatch: model expects {self.support_vectors.shape[1]}, got {x.shape}"
            )
        if len(self.dual_coef) == 0:
            return self.bias
        k = rbf_gram(self.support_vectors, x[None, :], self.params.gamma)[:, 0]
        return float(self.dual_coef @ k + self.bias)

    def decision_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if len(self.dual_coef) == 0:
            return np.full(len(x), self.bias)
        return self.dual_coef @ rbf_gram(self.support_vectors, x, self.params.gamma) + self.bias

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "support_vectors": self.support_vectors.tolist(),
            "dual_coef": self.dual_coef.tolist(),
            "bias": self.bias,
        }

    @classmethod
    def from_dict(cls, doc: dict, params: KernelParams) -> "BinaryModel":
        sv = np.array(doc["support_vectors"], dtype=float)
        return cls(tuple(doc["labels"]), sv.reshape(len(sv), -1) if sv.size else sv,
                   np.array(doc["dual_coef"], dtype=float), float(doc["bias"]), params)


def predict_binary(model: BinaryModel, x) -> tuple[float, int]:
    """Decision value and label; f == 0 goes to the lower label."""
    f = model.decision(x)
    lo, hi = model.labels
    return f, (hi if f > 0 else lo)


def dual_objective(alpha: np.ndarray, y: np.ndarray, gram: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ gram @ ay)


def train_binary_smo(
    x,
    y,
    params: KernelParams,
    tolerance: float = 1e-3,
    max_passes: int = 10,
    labels: tuple[int, int] | None = None,
    check_objective: bool = False,
) -> BinaryModel:
    """Fit a binary RBF SVM.

    ``y`` holds two distinct labels; the larger one becomes the positive side.
    One pass is ``n`` working-set updates, with a floor of 1000 updates in
    total.  If the KKT gap is still above ``tolerance`` after that the
    best-so-far model is returned with ``converged=False`` and a
    :class:`ConvergenceWarning`.  With ``check_objective`` the dual objective
    is recorded after every step and asserted non-decreasing.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y_raw = np.asarray(y)
    if labels is None:
        uniq = sorted(set(y_raw.tolist()))
        if len(uniq) != 2:
            raise ConfigError(f"binary training needs exactly 2 labels, got {uniq}")
        labels = (uniq[0], uniq[1])
    lo, hi = labels
    if not (np.any(y_raw == lo) and np.any(y_raw == hi)) or len(x) < 2:
        raise ConfigError("binary training needs both labels present and >= 2 samples")
    if not np.all((y_raw == lo) | (y_raw == hi)):
        raise ConfigError("samples carry labels outside the binary pair")
    if not np.all(np.isfinite(x)):
        raise ConfigError("non-finite training features")
    params = params.resolved(x.shape[1])
    c = params.c
    ys = np.where(y_raw == hi, 1.0, -1.0)
    n = len(x)
    gram = rbf_gram(x, x, params.gamma)
    q = gram * np.outer(ys, ys)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a'Qa - e'a
    budget = max(max_passes * n, 1000)
    trace = [0.0] if check_objective else []
    converged = False
    it = 0
    while it < budget:
        up = ((ys > 0) & (alpha < c)) | ((ys < 0) & (alpha > 0))
        low = ((ys > 0) & (alpha > 0)) | ((ys < 0) & (alpha < c))
        score = -ys * grad
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        g_max = score[i]
        g_min = score[low].min()
        if g_max - g_min < tolerance:
            converged = True
            break
        cand = np.flatnonzero(low & (score < g_max))
        b = g_max - score[cand]
        a = gram[i, i] + np.diag(gram)[cand] - 2.0 * gram[i, cand]
        a = np.where(a > 0, a, _TAU)
        j = int(cand[np.argmin(-(b * b) / a)])

        old_i, old_j = alpha[i], alpha[j]
        quad = max(q[i, i] + q[j, j] - 2.0 * ys[i] * ys[j] * q[i, j], _TAU)
        if ys[i] != ys[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > c:
                    alpha[i], alpha[j] = c, c - diff
            elif alpha[j] > c:
                alpha[j], alpha[i] = c, c + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > c:
                if alpha[i] > c:
                    alpha[i], alpha[j] = c, total - c
            elif alpha[j] < 0:
                alpha[j], alpha[i] = 0.0, total
            if total > c:
                if alpha[j] > c:
                    alpha[j], alpha[i] = c, total - c
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, total
        d_i, d_j = alpha[i] - old_i, alpha[j] - old_j
        grad += q[:, i] * d_i + q[:, j] * d_j
        it += 1
        if check_objective:
            obj = dual_objective(alpha, ys, gram)
            assert obj >= trace[-1] - 1e-9 * max(1.0, abs(obj)), (
                f"dual objective decreased at step {it}: {trace[-1]} -> {obj}"
            )
            trace.append(obj)
    if not converged:
        warnings.warn(
            f"SMO stopped after {it} updates without meeting tolerance {tolerance}",
            ConvergenceWarning,
            stacklevel=2,
        )

    # rounding can leave sum(a*y) a few ulps off; push the residual into a free multiplier
    alpha = np.clip(alpha, 0.0, c)
    resid = float(alpha @ ys)
    if resid != 0.0:
        free = np.flatnonzero((alpha > 0) & (alpha < c))
        for k in free if len(free) else np.flatnonzero(alpha > 0):
            new = alpha[k] - resid * ys[k]
            if 0.0 <= new <= c:
                alpha[k] = new
                break

    yg = ys * grad
    free = (alpha > 0) & (alpha < c)
    if free.any():
        rho = float(np.mean(yg[free]))
    else:
        at_upper, at_lower = alpha >= c, alpha <= 0
        lb_mask = (at_upper & (ys > 0)) | (at_lower & (ys < 0))
        ub_mask = (at_upper & (ys < 0)) | (at_lower & (ys > 0))
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2) if np.isfinite(ub) and np.isfinite(lb) else float(
            ub if np.isfinite(ub) else lb)
    sv = alpha > 0
    return BinaryModel(
        labels=(lo, hi),
        support_vectors=x[sv].copy(),
        dual_coef=(alpha * ys)[sv],
        bias=-rho,
        params=params,
        converged=converged,
        iterations=it,
        objective_trace=trace,
    )


# -- multiclass -------------------------------------------------------------

@dataclass
class MulticlassModel:
    """One binary model per unordered label pair over standardized features."""

    labels: tuple[int, ...]
    params: KernelParams
    mean: np.ndarray
    scale: np.ndarray
    models: dict[tuple[int, int], BinaryModel]

    def standardize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def predict(self, x) -> int:
        return predict_multiclass(self, x)

    def predict_batch(self, x) -> list[int]:
        x = self.standardize(np.atleast_2d(x))
        decisions = {pair: m.decision_batch(x) for pair, m in self.models.items()}
        return [self._vote({p: float(d[k]) for p, d in decisions.items()}) for k in range(len(x))]

    def _vote(self, decisions: dict[tuple[int, int], float]) -> int:
        votes = dict.fromkeys(self.labels, 0)
        strength = dict.fromkeys(self.labels, 0.0)
        for (lo, hi), f in decisions.items():
            winner = hi if f > 0 else lo
            votes[winner] += 1
            strength[winner] += abs(f)
        return min(self.labels, key=lambda k: (-votes[k], -strength[k], k))

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "params": {"c": self.params.c, "gamma": self.params.gamma},
            "labels": list(self.labels),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "pairs": [m.to_dict() for m in self.models.values()],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MulticlassModel":
        if doc.get("format") != FORMAT_TAG:
            raise ConfigError(f"unsupported model format {doc.get('format')!r}")
        params = KernelParams(doc["params"]["c"], doc["params"]["gamma"])
        models = {}
        for p in doc["pairs"]:
            m = BinaryModel.from_dict(p, params)
            models[m.labels] = m
        return cls(tuple(doc["labels"]), params, np.array(doc["mean"]), np.array(doc["scale"]), models)

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        doc = self.to_dict()
        if extra:
            doc["meta"] = extra
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "MulticlassModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _as_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(samples, tuple) and len(samples) == 2:
        x, y = samples
        return np.asarray(x, dtype=float), np.asarray(y, dtype=int)
    x = np.array([s.features for s in samples], dtype=float)
    y = np.array([s.label for s in samples], dtype=int)
    return x, y


def train_multiclass(samples, params: KernelParams = KernelParams(), **smo_kw) -> MulticlassModel:
    """One-vs-one training.  ``samples`` is a list of :class:`Sample` or an (X, y) pair."""
    x, y = _as_arrays(samples)
    if x.ndim != 2 or len(x) != len(y) or len(x) == 0:
        raise ConfigError("training data must be a non-empty (n, d) array with n labels")
    labels = tuple(sorted(set(y.tolist())))
    if len(labels) < 2:
        raise ConfigError(f"multiclass training needs >= 2 classes, got {list(labels)}")
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    xs = (x - mean) / scale
    params = params.resolved(x.shape[1])
    models = {}
    for lo, hi in combinations(labels, 2):
        mask = (y == lo) | (y == hi)
        models[(lo, hi)] = train_binary_smo(xs[mask], y[mask], params, labels=(lo, hi), **smo_kw)
    return MulticlassModel(labels, params, mean, scale, models)


def predict_multiclass(model: MulticlassModel, x) -> int:
    """Pairwise vote; ties go to the larger summed |f| of won contests, then the lower label."""
    xs = model.standardize(x)
    return model._vote({pair: m.decision(xs) for pair, m in model.models.items()})


# -- data splitting -----------------------------------------------------------

def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def split_train_test(samples, fraction: float = 0.8, seed: int = 0):
    """Stratified split; returns (train_idx, test_idx) index arrays.

    A class with a single sample goes to the training side with a warning.
    """
    if not 0 < fraction < 1:
        raise ConfigError(f"fraction must be in (0, 1), got {fraction}")
    _, y = _as_arrays(samples)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for label in sorted(set(y.tolist())):
        idx = np.flatnonzero(y == label)
        rng.shuffle(idx)
        if len(idx) == 1:
            warnings.warn(f"class {label} has a single sample; kept in training", stacklevel=2)
            train.extend(idx)
            continue
        k = min(max(_round_half_up(fraction * len(idx)), 1), len(idx) - 1)
        train.extend(idx[:k])
        test.extend(idx[k:])
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


def stratified_folds(y: Sequence[int], folds: int, seed: int = 0) -> np.ndarray:
    """Fold index per sample, dealing each shuffled class round-robin."""
    y = np.asarray(y)
    if folds < 2:
        raise ConfigError("need at least 2 folds")
    if folds > len(y):
        raise ConfigError(f"{folds} folds requested for {len(y)} samples")
    rng = np.random.default_rng(seed)
    assign = np.empty(len(y), dtype=int)
    offset = 0
    for label in sorted(set(y.tolist())):
        idx = np.flatnonzero(y == label)
        rng.shuffle(idx)
        assign[idx] = (np.arange(len(idx)) + offset) % folds
        offset += len(idx)
    return assign


@dataclass
class CVResult:
    fold_accuracies: list[float]
    matrix: ConfusionMatrix

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies))


def cross_validate(samples, params: KernelParams = KernelParams(), folds: int = 10,
                   seed: int = 0, **smo_kw) -> CVResult:
    x, y = _as_arrays(samples)
    assign = stratified_folds(y, folds, seed)
    present = sorted(set(y.tolist()))
    matrix = ConfusionMatrix(present=present)
    accs = []
    for f in range(folds):
        test = assign == f
        model = train_multiclass((x[~test], y[~test]), params, **smo_kw)
        pred = model.predict_batch(x[test])
        for t, p in zip(y[test], pred):
            matrix.accumulate(int(t), int(p))
        accs.append(float(np.mean(np.array(pred) == y[test])))
    return CVResult(accs, matrix)
