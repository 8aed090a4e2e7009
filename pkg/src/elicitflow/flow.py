"""Affine coupling flow over a standard-normal base: the learnable joint prior.

The flow stacks coupling blocks. Each block splits the coordinates into a
passive half (copied through) and an active half (affinely transformed with
scale and shift predicted from the passive half), then applies a fixed
seeded permutation so later blocks act on different coordinates.

Direction conventions:

* ``forward_normalizing`` maps parameter space to base space, u = g(theta),
  and returns the log |det dg/dtheta| needed for densities.
* ``sample`` draws u from N(0, I) and runs the inverse chain, so samples are
  differentiable in the network weights (randomness enters only through u).

Coordinates listed in ``positivity_dims`` are passed through softplus after
the generative direction (and inverse softplus, with its log-derivative,
before the normalizing direction), so e.g. a noise scale stays positive
while the flow itself works on all of R^K.
"""

import io
import json
import math
import struct

import numpy as np

from .tensor import (
    DomainError,
    ShapeError,
    Tensor,
    apply_elementwise,
    concat,
    index_select,
    matmul,
    reduce,
)

__all__ = [
    "FlowConfig",
    "DenseNet",
    "CouplingBlock",
    "JointPriorFlow",
    "sample",
    "forward_normalizing",
    "log_prob",
    "save_flow",
    "load_flow",
]

_MAGIC = b"EFLOW01\n"


class FlowConfig:
    """Architecture settings for the coupling flow."""

    def __init__(
        self,
        dim_theta,
        num_blocks=3,
        hidden_units=128,
        hidden_layers=2,
        scale_clamp=1.9,
        positivity_dims=(),
    ):
        if dim_theta < 2:
            raise ValueError("dim_theta must be >= 2 (coupling requires a split)")
        if num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        if hidden_units < 1:
            raise ValueError("hidden_units must be >= 1")
        if hidden_layers < 1:
            raise ValueError("hidden_layers must be >= 1")
        if scale_clamp <= 0:
            raise ValueError("scale_clamp must be positive")
        pos = tuple(sorted(set(int(i) for i in positivity_dims)))
        if pos and (pos[0] < 0 or pos[-1] >= dim_theta):
            raise ValueError(f"positivity_dims out of range for K={dim_theta}")
        self.dim_theta = int(dim_theta)
        self.num_blocks = int(num_blocks)
        self.hidden_units = int(hidden_units)
        self.hidden_layers = int(hidden_layers)
        self.scale_clamp = float(scale_clamp)
        self.positivity_dims = pos

    def to_dict(self):
        return {
            "dim_theta": self.dim_theta,
            "num_blocks": self.num_blocks,
            "hidden_units": self.hidden_units,
            "hidden_layers": self.hidden_layers,
            "scale_clamp": self.scale_clamp,
            "positivity_dims": list(self.positivity_dims),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def __repr__(self):
        return f"FlowConfig({self.to_dict()})"


class DenseNet:
    """Fully connected ReLU network; the last layer can start at zero so the
    enclosing coupling block is the identity map at initialization."""

    def __init__(self, in_dim, out_dim, hidden_units, hidden_layers, rng, zero_last=True):
        dims = [in_dim] + [hidden_units] * hidden_layers + [out_dim]
        self.weights = []
        self.biases = []
        last = len(dims) - 2
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            if zero_last and i == last:
                w = np.zeros((d_in, d_out))
                b = np.zeros(d_out)
            else:
                bound = 1.0 / math.sqrt(d_in)
                w = rng.uniform(-bound, bound, size=(d_in, d_out))
                b = rng.uniform(-bound, bound, size=d_out)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(b, requires_grad=True))

    def __call__(self, x):
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = apply_elementwise("add", matmul(h, w), b)
            if i != last:
                h = apply_elementwise("relu", h)
        return h

    @property
    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


class CouplingBlock:
    """One affine coupling step plus its fixed permutation."""

    def __init__(self, config, rng):
        k = config.dim_theta
        self.n_passive = (k + 1) // 2
        self.n_active = k - self.n_passive
        self.clamp = config.scale_clamp
        self.scale_net = DenseNet(
            self.n_passive, self.n_active, config.hidden_units,
            config.hidden_layers, rng,
        )
        self.shift_net = DenseNet(
            self.n_passive, self.n_active, config.hidden_units,
            config.hidden_layers, rng,
        )
        # cyclic rotation feeds the passive half into the next block's
        # active slots; a random permutation can leave a coordinate
        # untransformed by every block, freezing it at the base measure
        perm = (np.arange(k) + self.n_passive) % k
        self.permutation = perm
        self.inverse_permutation = np.argsort(perm)
        self._passive_idx = np.arange(self.n_passive)
        self._active_idx = np.arange(self.n_passive, k)

    def _scale_shift(self, passive):
        raw = self.scale_net(passive)
        # soft clamp keeps |s| < scale_clamp without killing gradients
        bound = Tensor(np.array(self.clamp))
        s = apply_elementwise("atan", apply_elementwise("div", raw, bound))
        s = apply_elementwise("mul", s, Tensor(np.array(2.0 * self.clamp / math.pi)))
        t = self.shift_net(passive)
        return s, t

    def normalizing(self, x):
        """theta-side -> base-side; returns (y, per-sample log_det)."""
        passive = index_select(x, self._passive_idx, axis=1)
        active = index_select(x, self._active_idx, axis=1)
        s, t = self._scale_shift(passive)
        new_active = apply_elementwise(
            "add", apply_elementwise("mul", active, apply_elementwise("exp", s)), t
        )
        y = concat([passive, new_active], axis=1)
        y = index_select(y, self.permutation, axis=1)
        return y, reduce("sum", s, axis=1)

    def generative(self, y):
        """base-side -> theta-side (exact inverse of ``normalizing``)."""
        x = index_select(y, self.inverse_permutation, axis=1)
        passive = index_select(x, self._passive_idx, axis=1)
        active = index_select(x, self._active_idx, axis=1)
        s, t = self._scale_shift(passive)
        new_active = apply_elementwise(
            "mul",
            apply_elementwise("sub", active, t),
            apply_elementwise("exp", apply_elementwise("negate", s)),
        )
        return concat([passive, new_active], axis=1)

    @property
    def parameters(self):
        return self.scale_net.parameters + self.shift_net.parameters


class JointPriorFlow:
    """Stack of coupling blocks defining the trainable joint prior."""

    def __init__(self, config, rng):
        self.config = config
        self.blocks = [CouplingBlock(config, rng) for _ in range(config.num_blocks)]

    @property
    def parameters(self):
        out = []
        for block in self.blocks:
            out.extend(block.parameters)
        return out

    def parameter_count(self):
        return sum(p.size for p in self.parameters)

    def frozen(self):
        """Read-only snapshot: same architecture, constant weights.

        Ops on the snapshot build no autodiff graph, which keeps large
        post-hoc evaluations cheap.
        """
        clone = JointPriorFlow.__new__(JointPriorFlow)
        clone.config = self.config
        clone.blocks = []
        for block in self.blocks:
            b = CouplingBlock.__new__(CouplingBlock)
            b.n_passive = block.n_passive
            b.n_active = block.n_active
            b.clamp = block.clamp
            b.permutation = block.permutation
            b.inverse_permutation = block.inverse_permutation
            b._passive_idx = block._passive_idx
            b._active_idx = block._active_idx
            for name in ("scale_net", "shift_net"):
                src = getattr(block, name)
                net = DenseNet.__new__(DenseNet)
                net.weights = [Tensor(w.data.copy()) for w in src.weights]
                net.biases = [Tensor(v.data.copy()) for v in src.biases]
                setattr(b, name, net)
            clone.blocks.append(b)
        return clone

    # -- distribution interface ------------------------------------------

    def sample(self, count, rng):
        """S draws from the prior, differentiable in the flow weights."""
        if count < 1:
            raise ValueError("count must be >= 1")
        u = Tensor(rng.standard_normal((count, self.config.dim_theta)))
        x = u
        for block in reversed(self.blocks):
            x = block.generative(x)
        if self.config.positivity_dims:
            x = _apply_positivity(x, self.config)
        return x

    def forward_normalizing(self, theta):
        """Map theta to base space; return (u, log|det du/dtheta|)."""
        theta = theta if isinstance(theta, Tensor) else Tensor(theta)
        if theta.ndim != 2 or theta.shape[1] != self.config.dim_theta:
            raise ShapeError(
                f"expected [S, {self.config.dim_theta}], got {theta.shape}"
            )
        log_det = Tensor(np.zeros(theta.shape[0]))
        x = theta
        if self.config.positivity_dims:
            x, log_det = _invert_positivity(x, self.config, log_det)
        for block in self.blocks:
            x, ld = block.normalizing(x)
            log_det = apply_elementwise("add", log_det, ld)
        return x, log_det

    def log_prob(self, theta):
        """log p(theta) by change of variables through the flow."""
        u, log_det = self.forward_normalizing(theta)
        k = self.config.dim_theta
        quad = reduce("sum", apply_elementwise("square", u), axis=1)
        base = apply_elementwise(
            "sub",
            Tensor(np.array(-0.5 * k * math.log(2.0 * math.pi))),
            apply_elementwise("mul", Tensor(np.array(0.5)), quad),
        )
        return apply_elementwise("add", base, log_det)


def _apply_positivity(x, config):
    cols = []
    pos = set(config.positivity_dims)
    for j in range(config.dim_theta):
        col = index_select(x, np.array([j]), axis=1)
        if j in pos:
            col = apply_elementwise("softplus", col)
        cols.append(col)
    return concat(cols, axis=1)


def _invert_positivity(x, config, log_det):
    """Inverse softplus on the positivity dims plus its log-derivative.

    z = softplus^{-1}(theta) = theta + log(1 - exp(-theta)), and
    d z / d theta has log softplus(-z), accumulated into log_det.
    """
    pos = set(config.positivity_dims)
    bad = x.data[:, sorted(pos)] <= 0.0
    if np.any(bad):
        raise DomainError(
            "forward_normalizing: positivity dim holds a non-positive value"
        )
    cols = []
    for j in range(config.dim_theta):
        col = index_select(x, np.array([j]), axis=1)
        if j in pos:
            em = apply_elementwise("exp", apply_elementwise("negate", col))
            one_minus = apply_elementwise("sub", Tensor(np.array(1.0)), em)
            z = apply_elementwise("add", col, apply_elementwise("log", one_minus))
            contrib = apply_elementwise("softplus", apply_elementwise("negate", z))
            log_det = apply_elementwise(
                "add", log_det, reduce("sum", contrib, axis=1)
            )
            col = z
        cols.append(col)
    return concat(cols, axis=1), log_det


# module-level operation surface ------------------------------------------

def sample(flow, count, rng):
    return flow.sample(count, rng)


def forward_normalizing(flow, theta):
    return flow.forward_normalizing(theta)


def log_prob(flow, theta):
    return flow.log_prob(theta)


# checkpointing -------------------------------------------------------------

def save_flow(flow, path):
    """Write a checkpoint: magic, u32-le JSON header length, JSON header
    (config, permutations, array shapes), then the raw little-endian float64
    weight arrays in declaration order (block, scale-then-shift net, layer,
    weight-then-bias)."""
    arrays = []
    shapes = []
    for block in flow.blocks:
        for p in block.parameters:
            arrays.append(p.data)
            shapes.append(list(p.data.shape))
    header = {
        "config": flow.config.to_dict(),
        "permutations": [block.permutation.tolist() for block in flow.blocks],
        "shapes": shapes,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for arr in arrays:
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_flow(path):
    """Rebuild a flow from a checkpoint written by :func:`save_flow`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path}: not a flow checkpoint")
    off = len(_MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    off += hlen
    config = FlowConfig.from_dict(header["config"])
    flow = JointPriorFlow(config, np.random.default_rng(0))
    perms = header["permutations"]
    params = []
    for block, perm in zip(flow.blocks, perms):
        block.permutation = np.array(perm, dtype=np.intp)
        block.inverse_permutation = np.argsort(block.permutation)
        params.extend(block.parameters)
    for p, shape in zip(params, header["shapes"]):
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape)
        off += n * 8
        p.data = arr.astype(np.float64).copy()
    if off != len(raw):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return flow
