"""Discrepancies between model-implied and expert statistics.

Distributional statistics (quantile vectors) are compared with a biased
energy-kernel MMD: the model contributes one statistic vector per batch
element, the expert a single vector, and the kernel is k(a,b) = -||a-b||.
Point statistics (correlations) use a plain squared error. Components
combine linearly with per-component weights into the training loss.
"""

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    apply_elementwise,
    pairwise_distance,
    reduce,
)

__all__ = [
    "LossComponentSpec",
    "LossReport",
    "mmd_energy_biased",
    "squared_error",
    "total_loss",
    "evaluate_loss",
    "DEFAULT_WEIGHTS",
]

DEFAULT_WEIGHTS = {"mmd_energy": 1.0, "squared_error": 0.1}


class LossComponentSpec:
    def __init__(self, name, kind, weight=None):
        if kind not in DEFAULT_WEIGHTS:
            raise ValueError(f"unknown loss kind {kind!r}")
        if weight is None:
            weight = DEFAULT_WEIGHTS[kind]
        if weight < 0:
            raise ValueError("weight must be >= 0")
        self.name = name
        self.kind = kind
        self.weight = float(weight)


class LossReport:
    """Weighted component values for one evaluation; total is their
    weighted sum exactly."""

    def __init__(self, names, kinds, weights, values):
        self.names = list(names)
        self.kinds = list(kinds)
        self.weights = [float(w) for w in weights]
        self.values = [float(v) for v in values]
        self.total = float(np.dot(self.weights, self.values))

    def as_dict(self):
        return {
            "total": self.total,
            "components": [
                {"name": n, "kind": k, "weight": w, "value": v}
                for n, k, w, v in zip(self.names, self.kinds, self.weights, self.values)
            ],
        }


def _mean_all(t):
    return reduce("mean", t)


def mmd_energy_biased(x, y):
    """Biased squared MMD with the energy kernel k(a,b) = -||a-b||:

    mean k(x,x') + mean k(y,y') - 2 mean k(x,y), clamped at 0 to absorb
    floating-point negativity. Zero iff both samples coincide.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    y = y if isinstance(y, Tensor) else Tensor(y)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ShapeError(f"mmd expects [n,d] vs [m,d], got {x.shape} and {y.shape}")
    dxx = _mean_all(pairwise_distance(x, x))
    dyy = _mean_all(pairwise_distance(y, y))
    dxy = _mean_all(pairwise_distance(x, y))
    two = Tensor(np.array(2.0))
    raw = apply_elementwise(
        "sub",
        apply_elementwise("mul", two, dxy),
        apply_elementwise("add", dxx, dyy),
    )
    return apply_elementwise("relu", raw)


def squared_error(t, t_hat):
    """Mean squared deviation of batched statistics t[B,p] from the expert
    point t_hat[p]."""
    t = t if isinstance(t, Tensor) else Tensor(t)
    t_hat = t_hat if isinstance(t_hat, Tensor) else Tensor(t_hat)
    if t.ndim != 2 or t_hat.ndim != 1 or t.shape[1] != t_hat.shape[0]:
        raise ShapeError(
            f"squared_error expects t[B,p] and t_hat[p], got {t.shape} and {t_hat.shape}"
        )
    diff = apply_elementwise("sub", t, t_hat)
    return reduce("mean", apply_elementwise("square", diff))


def total_loss(components, weights):
    """Weighted sum of named scalar components.

    ``components``: ordered (name, scalar Tensor) pairs; ``weights``: map
    name -> weight covering every component. Unknown or missing names are
    config errors.
    """
    names = [n for n, _ in components]
    unknown = set(weights) - set(names)
    if unknown:
        raise ValueError(f"weights name unknown components: {sorted(unknown)}")
    missing = [n for n in names if n not in weights]
    if missing:
        raise ValueError(f"components missing weights: {missing}")
    total = None
    for name, value in components:
        term = apply_elementwise("mul", Tensor(np.array(float(weights[name]))), value)
        total = term if total is None else apply_elementwise("add", total, term)
    return total


def evaluate_loss(model_set, expert_data, weights=None):
    """Full training objective for one batch of model statistics.

    Quantile statistics become MMD components (model batch vs the single
    expert vector); point statistics become squared errors. Returns the
    differentiable total and a detached LossReport.
    """
    statistics = expert_data.statistics
    names, kinds, ws, values, pairs = [], [], [], [], []
    for entry in model_set.entries:
        if entry.name not in statistics:
            raise ValueError(f"expert data lacks statistic {entry.name!r}")
        target = np.asarray(statistics[entry.name]["values"], dtype=np.float64)
        if entry.technique == "quantiles":
            kind = "mmd_energy"
            value = mmd_energy_biased(entry.values, Tensor(target[None, :]))
        else:
            kind = "squared_error"
            value = squared_error(entry.values, Tensor(target))
        weight = DEFAULT_WEIGHTS[kind] if weights is None else weights.get(
            entry.name, DEFAULT_WEIGHTS[kind]
        )
        names.append(entry.name)
        kinds.append(kind)
        ws.append(weight)
        values.append(float(value.data))
        pairs.append((entry.name, value))
    total = total_loss(pairs, dict(zip(names, ws)))
    return total, LossReport(names, kinds, ws, values)
