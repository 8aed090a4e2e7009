"""Evaluation-stage diagnostics over completed replications.

Covers the four post-training questions: did each run converge (OLS slope
of the loss tail), how should runs be combined (exponential loss-gap
weights and mixture sampling), how informative is each statistic about
each prior hyperparameter (one-at-a-time sensitivity sweeps), and how well
do learned statistics match the expert (long-format comparison rows).
"""

import csv
import warnings

import numpy as np

from .oracle import simulate_expert
from .tensor import Tensor

__all__ = [
    "SlopeReport",
    "AveragingWeights",
    "loss_slope",
    "slope_report",
    "averaging_weights",
    "average_prior_sample",
    "mixture_log_prob",
    "sensitivity_analysis",
    "default_sensitivity_grids",
    "comparison_table",
    "write_slopes_csv",
    "write_weights_csv",
    "write_sensitivity_csv",
    "write_comparison_csv",
]

SLOPE_WINDOW = 100
WORST_FLAG_COUNT = 5


def loss_slope(totals, m=SLOPE_WINDOW):
    """OLS slope of the loss against the epoch index over the last m epochs."""
    totals = np.asarray(totals, dtype=np.float64)
    if m < 2:
        raise ValueError("slope window must be >= 2")
    if totals.size < m:
        raise ValueError(f"trajectory holds {totals.size} epochs, window is {m}")
    y = totals[-m:]
    x = np.arange(m, dtype=np.float64)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


class SlopeReport:
    """Per-replication tail slopes, ranked ascending by magnitude; the
    largest ``WORST_FLAG_COUNT`` are flagged for visual inspection."""

    def __init__(self, seeds, slopes):
        self.seeds = list(seeds)
        self.slopes = [float(s) for s in slopes]
        self.scaled = [abs(s) * 100.0 for s in self.slopes]
        order = np.argsort(self.scaled, kind="stable")
        self.rank = np.empty(len(order), dtype=int)
        self.rank[order] = np.arange(1, len(order) + 1)
        cutoff = len(order) - WORST_FLAG_COUNT
        self.flag_worst = [bool(self.rank[i] > cutoff) for i in range(len(order))]


def slope_report(results, m=SLOPE_WINDOW):
    seeds = [r.seed for r in results]
    slopes = [loss_slope(r.trajectory.totals, m) for r in results]
    return SlopeReport(seeds, slopes)


class AveragingWeights:
    def __init__(self, seeds, losses, gamma=1.0):
        losses = np.asarray(losses, dtype=np.float64)
        if losses.size == 0:
            raise ValueError("no losses to weight")
        if not np.all(np.isfinite(losses)):
            raise ValueError("losses must be finite")
        delta = losses - losses.min()
        w = np.exp(-gamma * delta)
        w /= w.sum()
        self.seeds = list(seeds)
        self.losses = losses.tolist()
        self.deltas = delta.tolist()
        self.weights = w.tolist()
        self.gamma = float(gamma)


def averaging_weights(losses, gamma=1.0, seeds=None):
    """Exponential loss-gap weights w_r = exp(-gamma*Delta_r) / sum, with
    Delta_r the gap to the best final loss (the shift keeps the
    exponentials in range)."""
    if seeds is None:
        seeds = list(range(len(list(losses))))
    return AveragingWeights(seeds, losses, gamma)


def average_prior_sample(flows, weights, count, rng):
    """Draws from the weighted mixture of learned priors: pick a component
    by weight, then sample it."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(flows) != weights.size:
        raise ValueError("one weight per flow required")
    frozen = [f.frozen() for f in flows]
    picks = rng.choice(len(frozen), size=count, p=weights / weights.sum())
    k = frozen[0].config.dim_theta
    out = np.empty((count, k))
    for r, flow in enumerate(frozen):
        idx = np.nonzero(picks == r)[0]
        if idx.size:
            out[idx] = flow.sample(idx.size, rng).data
    return Tensor(out)


def mixture_log_prob(flows, weights, theta):
    """log of the mixture density sum_r w_r p_r(theta), stabilized."""
    weights = np.asarray(weights, dtype=np.float64)
    theta = theta if isinstance(theta, Tensor) else Tensor(theta)
    logs = np.stack(
        [f.frozen().log_prob(theta).data for f in flows], axis=0
    )  # [R, S]
    logw = np.log(weights / weights.sum())[:, None]
    a = logs + logw
    hi = a.max(axis=0)
    return Tensor(hi + np.log(np.exp(a - hi).sum(axis=0)))


# -- sensitivity ------------------------------------------------------------

def _component_sd(comp):
    d = comp.to_dict()
    if d["kind"] in ("normal", "skew_normal"):
        return d["scale"]
    if d["kind"] == "gamma":
        return float(np.sqrt(d["concentration"]) / d["rate"])
    raise ValueError(d["kind"])


def default_sensitivity_grids(spec, model, points=9, span=3.0):
    """One 9-point grid per scalar hyperparameter, centered at the truth and
    spanning +-3 component standard deviations (correlation entries span
    +-0.6); the center point is always the true value."""
    grids = {}
    names = list(model.param_names)
    coord = 0
    for comp in spec.components:
        d = comp.to_dict()
        if d["kind"] == "mv_normal":
            block = names[coord : coord + len(d["mean"])]
            for i, pname in enumerate(block):
                sd = d["scales"][i]
                for field, center in (("mean", d["mean"][i]), ("scale", d["scales"][i])):
                    grids[f"{pname}.{field}"] = np.linspace(
                        center - span * sd, center + span * sd, points
                    ).tolist()
            for i in range(len(block)):
                for j in range(i + 1, len(block)):
                    center = d["corr"][i][j]
                    grids[f"corr({block[i]},{block[j]})"] = np.linspace(
                        center - 0.6, center + 0.6, points
                    ).tolist()
            coord += len(d["mean"])
            continue
        pname = names[coord]
        sd = _component_sd(comp)
        for field, center in d.items():
            if field == "kind":
                continue
            grids[f"{pname}.{field}"] = np.linspace(
                center - span * sd, center + span * sd, points
            ).tolist()
        coord += 1
    return grids


def _with_hyperparameter(spec, model, name, value):
    """Copy of the prior with one hyperparameter replaced; ValueError
    propagates for invalid settings (negative scales, non-PD matrices)."""
    from .oracle import TruePrior

    d = spec.to_dict()
    names = list(model.param_names)
    coord = 0
    for comp in d["components"]:
        if comp["kind"] == "mv_normal":
            block = names[coord : coord + len(comp["mean"])]
            for i, pname in enumerate(block):
                if name == f"{pname}.mean":
                    comp["mean"][i] = value
                    return TruePrior.from_dict(d)
                if name == f"{pname}.scale":
                    comp["scales"][i] = value
                    return TruePrior.from_dict(d)
            for i in range(len(block)):
                for j in range(i + 1, len(block)):
                    if name == f"corr({block[i]},{block[j]})":
                        comp["corr"][i][j] = value
                        comp["corr"][j][i] = value
                        return TruePrior.from_dict(d)
            coord += len(comp["mean"])
            continue
        pname = names[coord]
        prefix = f"{pname}."
        if name.startswith(prefix):
            field = name[len(prefix):]
            if field not in comp:
                raise KeyError(f"{name}: component has no field {field!r}")
            comp[field] = value
            return TruePrior.from_dict(d)
        coord += 1
    raise KeyError(f"unknown hyperparameter {name!r}")


def sensitivity_analysis(spec, model, plan, grids=None, count=2000, seed=0):
    """One-at-a-time sweeps: for every grid value of every hyperparameter,
    forward-simulate with everything else at truth and record each elicited
    statistic. Returns long-format rows
    (hyperparameter, value, statistic, level, result); invalid settings are
    skipped with a warning."""
    if grids is None:
        grids = default_sensitivity_grids(spec, model)
    rows = []
    for name, grid in grids.items():
        for value in grid:
            try:
                varied = _with_hyperparameter(spec, model, name, float(value))
            except ValueError as exc:
                warnings.warn(f"skipping {name}={value}: {exc}", UserWarning)
                continue
            expert = simulate_expert(
                varied, model, plan, count, np.random.default_rng(seed)
            )
            for stat_name, entry in expert.statistics.items():
                labels = entry.get("levels") or entry.get("labels")
                for lvl, res in zip(labels, entry["values"]):
                    rows.append(
                        {
                            "hyperparameter": name,
                            "value": float(value),
                            "statistic": stat_name,
                            "level": lvl,
                            "result": float(res),
                        }
                    )
    return rows


# -- learned-vs-true comparison ----------------------------------------------

def comparison_table(results, expert):
    """Rows (seed, statistic, level, learned, true) behind the
    learned-vs-true scatter: quantile statistics contribute one row per
    level, point statistics one row per pair label."""
    if not results:
        raise ValueError("no results to compare")
    if not expert.statistics:
        raise ValueError("expert statistic set is empty")
    rows = []
    for result in results:
        learned_stats = result.final_statistics
        for stat_name, true_entry in expert.statistics.items():
            if stat_name not in learned_stats:
                raise ValueError(f"result {result.seed} lacks statistic {stat_name!r}")
            learned_entry = learned_stats[stat_name]
            labels = true_entry.get("levels") or true_entry.get("labels")
            for lvl, true_val, learned_val in zip(
                labels, true_entry["values"], learned_entry["values"]
            ):
                rows.append(
                    {
                        "seed": result.seed,
                        "statistic": stat_name,
                        "level": lvl,
                        "learned": float(learned_val),
                        "true": float(true_val),
                    }
                )
    return rows


# -- CSV emission -------------------------------------------------------------

def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_slopes_csv(path, report):
    _write_csv(
        path,
        ["seed", "slope", "abs_slope_x100", "rank", "flag_worst5"],
        [
            [s, repr(sl), repr(sc), int(rk), str(fl).lower()]
            for s, sl, sc, rk, fl in zip(
                report.seeds, report.slopes, report.scaled, report.rank,
                report.flag_worst,
            )
        ],
    )


def write_weights_csv(path, weights):
    _write_csv(
        path,
        ["seed", "final_loss", "delta", "weight"],
        [
            [s, repr(l), repr(d), repr(w)]
            for s, l, d, w in zip(
                weights.seeds, weights.losses, weights.deltas, weights.weights
            )
        ],
    )


def write_sensitivity_csv(path, rows):
    _write_csv(
        path,
        ["hyperparameter", "value", "statistic", "level", "result"],
        [
            [r["hyperparameter"], repr(r["value"]), r["statistic"], r["level"],
             repr(r["result"])]
            for r in rows
        ],
    )


def write_comparison_csv(path, rows):
    _write_csv(
        path,
        ["seed", "statistic", "level", "learned", "true"],
        [
            [r["seed"], r["statistic"], r["level"], repr(r["learned"]),
             repr(r["true"])]
            for r in rows
        ],
    )
