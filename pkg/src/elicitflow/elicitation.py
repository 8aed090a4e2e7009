"""Elicitation techniques: turn target-quantity samples into the statistic
vectors that the loss compares between model and expert.

Two techniques exist. ``quantiles`` summarizes a sample cloud by a fixed
ladder of empirical quantiles (default 5%, 25%, 50%, 75%, 95%), computed
with sort + linear interpolation between closest ranks so gradients pass
through the frozen sort permutation. ``moment_point`` passes point
estimates through unchanged (used for pairwise parameter correlations).

Both sides of the comparison run the same code: the model side carries a
batch dimension, the expert side is a single row.
"""

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    apply_elementwise,
    concat,
    index_select,
    reduce,
    reshape,
    sort_with_gradient,
)

__all__ = [
    "DEFAULT_LEVELS",
    "PlanEntry",
    "ElicitationPlan",
    "StatisticEntry",
    "ElicitedStatisticSet",
    "empirical_quantiles",
    "batched_quantiles",
    "build_statistics",
    "statistics_to_dict",
]

DEFAULT_LEVELS = (0.05, 0.25, 0.50, 0.75, 0.95)

_TECHNIQUES = ("quantiles", "moment_point")


class PlanEntry:
    """One (target, technique) pairing in declaration order."""

    def __init__(self, target, technique, levels=None, labels=None):
        if technique not in _TECHNIQUES:
            raise ValueError(f"unknown technique {technique!r}")
        if technique == "quantiles":
            levels = tuple(levels) if levels is not None else DEFAULT_LEVELS
            arr = np.asarray(levels, dtype=np.float64)
            if arr.size == 0 or np.any(arr <= 0) or np.any(arr >= 1):
                raise ValueError("quantile levels must lie strictly inside (0,1)")
            if np.any(np.diff(arr) <= 0):
                raise ValueError("quantile levels must be strictly increasing")
        else:
            levels = None
        self.target = target
        self.technique = technique
        self.levels = levels
        self.labels = tuple(labels) if labels is not None else None

    @property
    def name(self):
        return f"{self.target}:{self.technique}"

    def to_dict(self):
        d = {"target": self.target, "technique": self.technique}
        if self.levels is not None:
            d["levels"] = list(self.levels)
        if self.labels is not None:
            d["labels"] = list(self.labels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["target"], d["technique"], d.get("levels"), d.get("labels"))


class ElicitationPlan:
    def __init__(self, entries):
        entries = list(entries)
        if not entries:
            raise ValueError("elicitation plan must name at least one statistic")
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise ValueError("duplicate statistic in plan")
        self.entries = entries

    def __len__(self):
        return len(self.entries)

    def to_dict(self):
        return {"entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, d):
        return cls([PlanEntry.from_dict(e) for e in d["entries"]])


class StatisticEntry:
    """One computed statistic: a [B,p] tensor (model side) or [p] vector
    (expert side)."""

    def __init__(self, name, technique, values, levels=None, labels=None):
        self.name = name
        self.technique = technique
        self.values = values
        self.levels = levels
        self.labels = labels


class ElicitedStatisticSet:
    def __init__(self, side, entries):
        if side not in ("model", "expert"):
            raise ValueError(f"side must be model or expert, got {side!r}")
        self.side = side
        self.entries = entries

    def __getitem__(self, name):
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def names(self):
        return [e.name for e in self.entries]


def _interp_indices(count, levels):
    pos = np.asarray(levels, dtype=np.float64) * (count - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.ceil(pos).astype(np.intp)
    frac = pos - lo
    return lo, hi, frac


def empirical_quantiles(values, levels):
    """Quantiles of a 1-D sample at the given levels: sorted values
    linearly interpolated at position p*(S-1). Differentiable through the
    sort's frozen permutation."""
    values = values if isinstance(values, Tensor) else Tensor(values)
    if values.ndim != 1:
        raise ShapeError(f"empirical_quantiles expects a 1-D sample, got {values.shape}")
    if values.size < 2:
        raise ShapeError("need at least 2 samples for quantiles")
    arr = np.asarray(levels, dtype=np.float64)
    if np.any(arr <= 0) or np.any(arr >= 1):
        raise ValueError("quantile levels must lie strictly inside (0,1)")
    batched = batched_quantiles(reshape(values, (1, values.size)), levels)
    return reshape(batched, (len(arr),))


def batched_quantiles(values, levels):
    """Rowwise quantiles of values[B,S] -> [B, len(levels)]."""
    values = values if isinstance(values, Tensor) else Tensor(values)
    if values.ndim != 2:
        raise ShapeError(f"batched_quantiles expects [B,S], got {values.shape}")
    s = values.shape[1]
    lo, hi, frac = _interp_indices(s, levels)
    srt = sort_with_gradient(values, axis=1)
    lo_vals = index_select(srt, lo, axis=1)
    hi_vals = index_select(srt, hi, axis=1)
    w = Tensor(frac)
    one_minus = Tensor(1.0 - frac)
    return apply_elementwise(
        "add",
        apply_elementwise("mul", lo_vals, one_minus),
        apply_elementwise("mul", hi_vals, w),
    )


def build_statistics(targets, plan, side):
    """Assemble the plan's statistics from simulated targets, in plan
    declaration order (the loss indexes components by this order).

    Model side: each target is a [B,S] tensor (or [B,P] for point
    estimates) and every statistic keeps its batch dimension. Expert side:
    plain [S] / [P] numpy arrays in, one numpy vector per statistic out.
    """
    entries = []
    for pe in plan.entries:
        if pe.target not in targets:
            raise ValueError(f"plan names target {pe.target!r} missing from simulation")
        raw = targets[pe.target]
        if side == "expert":
            arr = raw.data if isinstance(raw, Tensor) else np.asarray(raw, dtype=np.float64)
            if pe.technique == "quantiles":
                vals = empirical_quantiles(Tensor(arr), pe.levels).data
            else:
                vals = arr.ravel().copy()
                if np.any(np.abs(vals) > 1.0 + 1e-9):
                    raise ValueError(
                        f"point statistic {pe.name!r} outside [-1,1]: not a correlation"
                    )
        else:
            t = raw if isinstance(raw, Tensor) else Tensor(raw)
            if pe.technique == "quantiles":
                vals = batched_quantiles(t, pe.levels)
            else:
                vals = t
        entries.append(
            StatisticEntry(pe.name, pe.technique, vals, pe.levels, pe.labels)
        )
    return ElicitedStatisticSet(side, entries)


def statistics_to_dict(stat_set):
    """Expert-side statistic set as a JSON-ready mapping
    name -> {values, levels?, labels?}."""
    if stat_set.side != "expert":
        raise ValueError("only single-row (expert-side) sets serialize to dicts")
    out = {}
    for entry in stat_set.entries:
        vals = entry.values.data if isinstance(entry.values, Tensor) else entry.values
        rec = {"values": np.asarray(vals, dtype=np.float64).ravel().tolist()}
        if entry.levels is not None:
            rec["levels"] = list(entry.levels)
        if entry.labels is not None:
            rec["labels"] = list(entry.labels)
        out[entry.name] = rec
    return out
