"""Ground-truth priors and the simulated expert.

In place of a human expert, a known joint prior generates data through the
same generative model the learner uses; the elicited statistics of those
simulations are frozen once and serve as the training target. Marginal
families cover Normal, two-piece SkewNormal and shape-rate Gamma, plus a
correlated multivariate-normal block for coefficient vectors.
"""

import json

import numpy as np

__all__ = [
    "Normal",
    "SkewNormal",
    "Gamma",
    "MvNormalBlock",
    "TruePrior",
    "ExpertData",
    "sample_true_prior",
    "simulate_expert",
]


class Normal:
    dim = 1

    def __init__(self, loc, scale):
        if scale <= 0:
            raise ValueError("scale must be positive")
        self.loc = float(loc)
        self.scale = float(scale)

    def sample(self, count, rng):
        return (self.loc + self.scale * rng.standard_normal(count))[:, None]

    def to_dict(self):
        return {"kind": "normal", "loc": self.loc, "scale": self.scale}


class SkewNormal:
    """Two-piece skew normal: right piece stretched by the shape factor,
    left piece compressed by it, so shape > 1 is right-skewed and shape = 1
    recovers the symmetric normal."""

    dim = 1

    def __init__(self, loc, scale, shape):
        if scale <= 0 or shape <= 0:
            raise ValueError("scale and shape must be positive")
        self.loc = float(loc)
        self.scale = float(scale)
        self.shape = float(shape)

    def sample(self, count, rng):
        g = self.shape
        z = np.abs(rng.standard_normal(count))
        right = rng.random(count) < g * g / (1.0 + g * g)
        out = np.where(
            right,
            self.loc + self.scale * g * z,
            self.loc - self.scale / g * z,
        )
        return out[:, None]

    def to_dict(self):
        return {
            "kind": "skew_normal",
            "loc": self.loc,
            "scale": self.scale,
            "shape": self.shape,
        }


class Gamma:
    """Shape-rate parameterization: mean = concentration / rate."""

    dim = 1

    def __init__(self, concentration, rate):
        if concentration <= 0 or rate <= 0:
            raise ValueError("concentration and rate must be positive")
        self.concentration = float(concentration)
        self.rate = float(rate)

    def sample(self, count, rng):
        return (rng.gamma(self.concentration, 1.0 / self.rate, size=count))[:, None]

    def to_dict(self):
        return {
            "kind": "gamma",
            "concentration": self.concentration,
            "rate": self.rate,
        }


class MvNormalBlock:
    """Correlated normal block with covariance D(s) R D(s)."""

    def __init__(self, mean, corr, scales):
        mean = np.asarray(mean, dtype=np.float64)
        corr = np.asarray(corr, dtype=np.float64)
        scales = np.asarray(scales, dtype=np.float64)
        k = mean.size
        if corr.shape != (k, k) or scales.size != k:
            raise ValueError("mean, corr, scales sizes disagree")
        if not np.allclose(corr, corr.T) or not np.allclose(np.diag(corr), 1.0):
            raise ValueError("corr must be symmetric with unit diagonal")
        if np.any(scales <= 0):
            raise ValueError("scales must be positive")
        cov = np.diag(scales) @ corr @ np.diag(scales)
        try:
            self._chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("correlation matrix is not positive-definite") from exc
        self.mean = mean
        self.corr = corr
        self.scales = scales
        self.dim = k

    def sample(self, count, rng):
        z = rng.standard_normal((count, self.dim))
        return self.mean + z @ self._chol.T

    def to_dict(self):
        return {
            "kind": "mv_normal",
            "mean": self.mean.tolist(),
            "corr": self.corr.tolist(),
            "scales": self.scales.tolist(),
        }


_MARGINAL_KINDS = {
    "normal": lambda d: Normal(d["loc"], d["scale"]),
    "skew_normal": lambda d: SkewNormal(d["loc"], d["scale"], d["shape"]),
    "gamma": lambda d: Gamma(d["concentration"], d["rate"]),
    "mv_normal": lambda d: MvNormalBlock(d["mean"], d["corr"], d["scales"]),
}


class TruePrior:
    """Ordered list of marginal or block components; dims concatenate."""

    def __init__(self, components):
        if not components:
            raise ValueError("a prior needs at least one component")
        self.components = list(components)
        self.dim = sum(c.dim for c in self.components)

    def sample(self, count, rng):
        return np.concatenate([c.sample(count, rng) for c in self.components], axis=1)

    def to_dict(self):
        return {"components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, d):
        return cls([_MARGINAL_KINDS[c["kind"]](c) for c in d["components"]])


def sample_true_prior(spec, count, rng):
    """Independent draws from the ground-truth prior, shape [count, K]."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return spec.sample(count, rng)


class ExpertData:
    """Frozen expert-elicited statistics plus how they were produced.

    ``statistics`` maps statistic name -> {"levels"/"labels", "values"};
    quantile vectors must be non-decreasing and everything finite.
    """

    def __init__(self, statistics, provenance):
        for name, entry in statistics.items():
            vals = np.asarray(entry["values"], dtype=np.float64)
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"expert statistic {name!r} holds non-finite values")
            if "levels" in entry and np.any(np.diff(vals) < 0):
                raise ValueError(f"expert quantiles {name!r} are not non-decreasing")
        self.statistics = statistics
        self.provenance = provenance

    def to_json(self):
        return json.dumps(
            {"statistics": self.statistics, "provenance": self.provenance},
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["statistics"], d.get("provenance", {}))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def simulate_expert(spec, model, plan, count, rng):
    """Forward-simulate the oracle prior through the model and freeze the
    elicited statistics. ``count`` draws are taken once (default workflows
    use 10,000); correlations are the empirical values of those draws."""
    from .elicitation import build_statistics, statistics_to_dict

    if count < 1000:
        raise ValueError("expert simulation needs count >= 1000 for stable statistics")
    theta = sample_true_prior(spec, count, rng)
    targets = model.simulate_hard(theta, rng)
    stat_set = build_statistics(targets, plan, side="expert")
    statistics = statistics_to_dict(stat_set)
    provenance = {
        "oracle": spec.to_dict(),
        "sample_count": int(count),
        "correlation_convention": "empirical over the oracle draws",
    }
    return ExpertData(statistics, provenance)
