"""Generative-model simulators producing differentiable target quantities.

Two model kinds cover the study designs:

* ``binomial_regression`` - success probability sigmoid(b0 + b1 x) over a
  scaled 1..50 predictor grid; predictive counts at the grid's 25% and 75%
  quantile points. Training-side draws use a tempered categorical
  relaxation over the 31 outcomes (Gumbel noise + softmax readout) so
  counts stay differentiable; the expert side samples exactly.
* ``normal_regression`` - three dummy-coded groups with means b0, b0+b1,
  b0+b2 and noise scale sigma; one reparameterized predictive draw per
  group and prior sample, plus a variance-explained summary.

Pairwise parameter correlations are computed per batch element across the
S prior draws and are shared by both model kinds.
"""

import math
import warnings

import numpy as np

from .tensor import (
    DomainError,
    ShapeError,
    Tensor,
    apply_elementwise,
    concat,
    index_select,
    reduce,
    reshape,
    softmax_expectation,
)

__all__ = [
    "DesignSpec",
    "GenerativeModel",
    "simulate_binomial",
    "simulate_normal",
    "compute_r2",
    "compute_param_correlations",
    "pair_labels",
]


class DesignSpec:
    """Fixed covariate design for one model kind."""

    def __init__(self, kind):
        if kind == "binomial":
            grid = np.arange(1, 51, dtype=np.float64)
            x = grid / np.std(grid)
            self.x = x
            self.x0 = float(np.quantile(x, 0.25))
            self.x1 = float(np.quantile(x, 0.75))
            if not self.x0 < self.x1:
                raise ValueError("design quantile points must be ordered")
        elif kind == "normal":
            self.dummy = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        else:
            raise ValueError(f"unknown design kind {kind!r}")
        self.kind = kind

    def to_dict(self):
        if self.kind == "binomial":
            return {"kind": self.kind, "x0": self.x0, "x1": self.x1, "points": len(self.x)}
        return {"kind": self.kind, "dummy": self.dummy.tolist()}


def _coord(theta, j):
    """Coordinate j of theta[B,S,K] as a [B,S] tensor."""
    b, s, _ = theta.shape
    col = index_select(theta, np.array([j]), axis=2)
    return reshape(col, (b, s))


def _binomial_log_pmf_grid(total_count):
    k = np.arange(total_count + 1, dtype=np.float64)
    log_comb = np.array(
        [
            math.lgamma(total_count + 1) - math.lgamma(i + 1) - math.lgamma(total_count - i + 1)
            for i in range(total_count + 1)
        ]
    )
    return k, log_comb


def _gumbel(rng, shape):
    u = np.clip(rng.random(shape), 1e-12, 1.0 - 1e-12)
    return -np.log(-np.log(u))


def _relaxed_binomial(eta, total_count, tau, rng):
    """Differentiable counts: softmax((log pmf + Gumbel)/tau) expectation.

    The pmf is Binomial(sigmoid(eta), total_count), assembled in log space
    from the logit so extreme eta stays stable.
    """
    b, s = eta.shape
    k, log_comb = _binomial_log_pmf_grid(total_count)
    log_p = apply_elementwise("negate", apply_elementwise(
        "softplus", apply_elementwise("negate", eta)))
    log_1mp = apply_elementwise("negate", apply_elementwise("softplus", eta))
    lp = reshape(log_p, (b * s, 1))
    l1 = reshape(log_1mp, (b * s, 1))
    logits = apply_elementwise(
        "add",
        apply_elementwise(
            "add",
            apply_elementwise("mul", lp, Tensor(k)),
            apply_elementwise("mul", l1, Tensor(total_count - k)),
        ),
        Tensor(log_comb),
    )
    noisy = apply_elementwise("add", logits, Tensor(_gumbel(rng, (b * s, total_count + 1))))
    y = softmax_expectation(noisy, k, tau)
    return reshape(y, (b, s))


def simulate_binomial(theta, design, tau, rng):
    """Relaxed predictive counts at the two design points; theta[B,S,2]."""
    if tau is None or tau <= 0:
        raise ValueError(f"relaxation temperature must be positive, got {tau}")
    theta = theta if isinstance(theta, Tensor) else Tensor(theta)
    if theta.ndim != 3 or theta.shape[2] != 2:
        raise ShapeError(f"binomial model expects theta[B,S,2], got {theta.shape}")
    b0 = _coord(theta, 0)
    b1 = _coord(theta, 1)
    out = {}
    for name, x in (("y|x0", design.x0), ("y|x1", design.x1)):
        eta = apply_elementwise(
            "add", b0, apply_elementwise("mul", b1, Tensor(np.array(x)))
        )
        out[name] = _relaxed_binomial(eta, 30, tau, rng)
    return out


def simulate_binomial_hard(theta, design, total_count, rng):
    """Exact Binomial sampling for the expert side; theta is [S,2] numpy."""
    b0 = theta[:, 0]
    b1 = theta[:, 1]
    out = {}
    for name, x in (("y|x0", design.x0), ("y|x1", design.x1)):
        eta = b0 + b1 * x
        p = np.where(eta >= 0, 1.0 / (1.0 + np.exp(-eta)),
                     np.exp(eta) / (1.0 + np.exp(eta)))
        out[name] = rng.binomial(total_count, p).astype(np.float64)
    return out


def simulate_normal(theta, design, rng):
    """One reparameterized predictive draw per group; theta[B,S,4]."""
    theta = theta if isinstance(theta, Tensor) else Tensor(theta)
    if theta.ndim != 3 or theta.shape[2] != 4:
        raise ShapeError(f"normal model expects theta[B,S,4], got {theta.shape}")
    sigma_data = theta.data[:, :, 3]
    if np.any(sigma_data <= 0):
        raise DomainError(
            "normal model requires sigma > 0; the prior's positivity map is broken"
        )
    b, s, _ = theta.shape
    b0 = _coord(theta, 0)
    b1 = _coord(theta, 1)
    b2 = _coord(theta, 2)
    sigma = _coord(theta, 3)
    eps = rng.standard_normal((b, s, 3))
    mus = {
        "y|gr1": b0,
        "y|gr2": apply_elementwise("add", b0, b1),
        "y|gr3": apply_elementwise("add", b0, b2),
    }
    out = {}
    for g, (name, mu) in enumerate(mus.items()):
        noise = apply_elementwise("mul", sigma, Tensor(eps[:, :, g]))
        out[name] = apply_elementwise("add", mu, noise)
    return out


def compute_r2(theta, design):
    """Share of predictive variance explained by the group structure:
    Var over the three group means divided by (that variance + sigma^2),
    population convention, one value per prior sample."""
    theta = theta if isinstance(theta, Tensor) else Tensor(theta)
    if theta.ndim != 3 or theta.shape[2] != 4:
        raise ShapeError(f"expected theta[B,S,4], got {theta.shape}")
    b0 = _coord(theta, 0)
    b1 = _coord(theta, 1)
    b2 = _coord(theta, 2)
    sigma = _coord(theta, 3)
    mu1 = b0
    mu2 = apply_elementwise("add", b0, b1)
    mu3 = apply_elementwise("add", b0, b2)
    total = apply_elementwise("add", apply_elementwise("add", mu1, mu2), mu3)
    m = apply_elementwise("div", total, Tensor(np.array(3.0)))
    var = None
    for mu in (mu1, mu2, mu3):
        dev2 = apply_elementwise("square", apply_elementwise("sub", mu, m))
        var = dev2 if var is None else apply_elementwise("add", var, dev2)
    var = apply_elementwise("div", var, Tensor(np.array(3.0)))
    denom = apply_elementwise("add", var, apply_elementwise("square", sigma))
    return apply_elementwise("div", var, denom)


def pair_labels(param_names):
    k = len(param_names)
    return [
        f"{param_names[a]}~{param_names[b]}"
        for a in range(k)
        for b in range(a + 1, k)
    ]


def compute_param_correlations(theta):
    """Pearson correlation across the S draws for every coordinate pair,
    one [B, K(K-1)/2] tensor. A zero-variance coordinate yields exactly 0
    for its pairs (with a warning): a degenerate prior carries no
    correlation signal."""
    theta = theta if isinstance(theta, Tensor) else Tensor(theta)
    if theta.ndim != 3:
        raise ShapeError(f"expected theta[B,S,K], got {theta.shape}")
    b, s, k = theta.shape
    if s < 2:
        raise ShapeError("correlations need at least 2 samples")
    coords = [_coord(theta, j) for j in range(k)]
    devs = []
    stds = []
    for c in coords:
        mean = reduce("mean", c, axis=1, keepdims=True)
        dev = apply_elementwise("sub", c, mean)
        devs.append(dev)
        stds.append(reduce("std", c, axis=1))
    cols = []
    degenerate = False
    for a in range(k):
        for c in range(a + 1, k):
            cov = reduce(
                "mean", apply_elementwise("mul", devs[a], devs[c]), axis=1
            )
            denom = apply_elementwise("mul", stds[a], stds[c])
            mask = (denom.data == 0.0).astype(np.float64)
            if np.any(mask):
                degenerate = True
            corr = apply_elementwise(
                "div", cov, apply_elementwise("add", denom, Tensor(mask))
            )
            cols.append(reshape(corr, (b, 1)))
    if degenerate:
        warnings.warn(
            "zero-variance coordinate: correlation reported as 0", RuntimeWarning
        )
    return concat(cols, axis=1)


class GenerativeModel:
    """Bundle of model kind, design and parameter names with the two
    simulation surfaces the pipeline needs: differentiable batched targets
    for training, plain numpy targets for the frozen expert."""

    def __init__(self, kind, param_names, total_count=30):
        if kind == "binomial_regression":
            if len(param_names) != 2:
                raise ValueError("binomial regression uses 2 parameters")
            if total_count < 1:
                raise ValueError("total_count must be >= 1")
            self.design = DesignSpec("binomial")
            self.positivity_dims = ()
        elif kind == "normal_regression":
            if len(param_names) != 4:
                raise ValueError("normal regression uses 4 parameters")
            self.design = DesignSpec("normal")
            self.positivity_dims = (3,)
        else:
            raise ValueError(f"unknown model kind {kind!r}")
        self.kind = kind
        self.param_names = tuple(param_names)
        self.total_count = int(total_count)

    @property
    def dim_theta(self):
        return len(self.param_names)

    @property
    def correlation_labels(self):
        return pair_labels(self.param_names)

    def simulate(self, theta, rng, tau=None):
        """All differentiable targets for theta[B,S,K] (training side)."""
        if self.kind == "binomial_regression":
            targets = simulate_binomial(theta, self.design, tau, rng)
        else:
            targets = simulate_normal(theta, self.design, rng)
            targets["R2"] = compute_r2(theta, self.design)
        targets["corr"] = compute_param_correlations(theta)
        return targets

    def simulate_hard(self, theta, rng):
        """Expert-side targets for numpy theta[S,K]: exact sampling, no
        graph; correlations share the batched code path (B=1)."""
        theta = np.asarray(theta, dtype=np.float64)
        if self.kind == "binomial_regression":
            targets = simulate_binomial_hard(theta, self.design, self.total_count, rng)
        else:
            batched = simulate_normal(Tensor(theta[None, :, :]), self.design, rng)
            targets = {name: t.data[0] for name, t in batched.items()}
            targets["R2"] = compute_r2(Tensor(theta[None, :, :]), self.design).data[0]
        corr = compute_param_correlations(Tensor(theta[None, :, :]))
        targets["corr"] = corr.data[0]
        return targets

    def to_dict(self):
        return {
            "kind": self.kind,
            "param_names": list(self.param_names),
            "total_count": self.total_count,
            "design": self.design.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d["param_names"], d.get("total_count", 30))
