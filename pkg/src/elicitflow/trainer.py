"""Training loop: one Adam step per epoch on a freshly simulated batch.

Each epoch draws B*S parameter vectors from the flow, reshapes them to
[B, S, K], simulates the model targets, builds the batch of elicited
statistics, evaluates the weighted loss against the frozen expert
statistics, and applies one optimizer update. There is no finite dataset
to sweep, so an epoch is exactly one gradient step.

Randomness is split from the run seed into three documented streams:
flow initialization, the training loop (base draws + simulator noise),
and the post-training evaluation at 10,000 samples.
"""

import csv
import json
import warnings
from pathlib import Path

import numpy as np

from .elicitation import build_statistics, statistics_to_dict
from .flow import JointPriorFlow, save_flow
from .loss import evaluate_loss
from .tensor import reshape

__all__ = [
    "TrainConfig",
    "AdamOptimizer",
    "TrainingTrajectory",
    "ReplicationResult",
    "DivergenceError",
    "train",
    "run_replications",
    "split_run_streams",
    "EVAL_SAMPLE_COUNT",
]

EVAL_SAMPLE_COUNT = 10_000


class TrainConfig:
    def __init__(
        self,
        epochs,
        learning_rate,
        batch_size=128,
        samples_per_prior=200,
        adam_beta1=0.9,
        adam_beta2=0.999,
        adam_eps=1e-7,
        seed=1,
        gumbel_tau=1.0,
        grad_clip=None,
    ):
        if epochs < 0:
            raise ValueError("epochs must be >= 0")
        if learning_rate <= 0 or batch_size < 1 or samples_per_prior < 2:
            raise ValueError("learning_rate, batch_size, samples_per_prior must be positive")
        if not (0 < adam_beta1 < 1 and 0 < adam_beta2 < 1 and adam_eps > 0):
            raise ValueError("invalid Adam constants")
        if gumbel_tau is not None and gumbel_tau <= 0:
            raise ValueError("gumbel_tau must be positive")
        if grad_clip is not None and grad_clip <= 0:
            raise ValueError("grad_clip must be positive when set")
        self.epochs = int(epochs)
        self.learning_rate = float(learning_rate)
        self.batch_size = int(batch_size)
        self.samples_per_prior = int(samples_per_prior)
        self.adam_beta1 = float(adam_beta1)
        self.adam_beta2 = float(adam_beta2)
        self.adam_eps = float(adam_eps)
        self.seed = int(seed)
        self.gumbel_tau = None if gumbel_tau is None else float(gumbel_tau)
        self.grad_clip = None if grad_clip is None else float(grad_clip)

    def with_seed(self, seed):
        d = self.to_dict()
        d["seed"] = int(seed)
        return TrainConfig(**d)

    def to_dict(self):
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "samples_per_prior": self.samples_per_prior,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "seed": self.seed,
            "gumbel_tau": self.gumbel_tau,
            "grad_clip": self.grad_clip,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class AdamOptimizer:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-7):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def clip_gradients(self, max_norm):
        total = 0.0
        for p in self.params:
            if p.grad is not None:
                total += float(np.sum(p.grad**2))
        norm = np.sqrt(total)
        if norm > max_norm:
            scale = max_norm / norm
            for p in self.params:
                if p.grad is not None:
                    p.grad *= scale
        return norm

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else 0.0
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class TrainingTrajectory:
    """Per-epoch log: total loss, each component, and the marginal mean/SD
    of every parameter computed from that epoch's samples."""

    def __init__(self, component_names, param_names):
        self.component_names = list(component_names)
        self.param_names = list(param_names)
        self.rows = []

    @property
    def header(self):
        return (
            ["epoch", "loss_total"]
            + [f"loss_{n}" for n in self.component_names]
            + [f"mean_{p}" for p in self.param_names]
            + [f"sd_{p}" for p in self.param_names]
        )

    def append(self, epoch, total, component_values, means, sds):
        self.rows.append(
            [float(epoch), float(total)]
            + [float(v) for v in component_values]
            + [float(m) for m in means]
            + [float(s) for s in sds]
        )

    @property
    def totals(self):
        return [row[1] for row in self.rows]

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.header)
            for row in self.rows:
                writer.writerow([int(row[0])] + [repr(v) for v in row[1:]])

    @classmethod
    def read_csv(cls, path):
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(c) for c in row] for row in reader]
        comp = [h[len("loss_"):] for h in header if h.startswith("loss_") and h != "loss_total"]
        params = [h[len("mean_"):] for h in header if h.startswith("mean_")]
        out = cls(comp, params)
        out.rows = rows
        return out


class ReplicationResult:
    def __init__(self, seed, flow, trajectory, final_loss, final_statistics):
        self.seed = seed
        self.flow = flow
        self.trajectory = trajectory
        self.final_loss = final_loss
        self.final_statistics = final_statistics

    def result_payload(self, checkpoint_path):
        return {
            "seed": self.seed,
            "final_loss": self.final_loss,
            "statistics": self.final_statistics,
            "checkpoint": str(checkpoint_path),
        }


class DivergenceError(RuntimeError):
    """Loss became non-finite; carries the epoch and last finite report."""

    def __init__(self, epoch, last_report):
        self.epoch = epoch
        self.last_report = last_report
        super().__init__(
            f"non-finite loss at epoch {epoch}; "
            "consider a smaller learning rate"
        )


def split_run_streams(seed):
    """Documented splitting rule: (flow-init, training, evaluation)."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def _epoch_statistics(flow, model, plan, cfg, rng):
    b, s = cfg.batch_size, cfg.samples_per_prior
    theta_flat = flow.sample(b * s, rng)
    theta = reshape(theta_flat, (b, s, model.dim_theta))
    targets = model.simulate(theta, rng, tau=cfg.gumbel_tau)
    return theta, build_statistics(targets, plan, side="model")


def final_statistics(flow, model, plan, rng, count=EVAL_SAMPLE_COUNT):
    """Post-training statistics at evaluation scale with exact sampling."""
    theta = flow.frozen().sample(count, rng)
    targets = model.simulate_hard(theta.data, rng)
    stat_set = build_statistics(targets, plan, side="expert")
    return statistics_to_dict(stat_set)


def train(flow, model, plan, expert, cfg):
    """Optimize the flow against the expert statistics; deterministic for a
    given cfg.seed. Raises DivergenceError on a non-finite loss."""
    for pe in plan.entries:
        if pe.name not in expert.statistics:
            raise ValueError(f"expert data lacks statistic {pe.name!r}")
    _, train_rng, eval_rng = split_run_streams(cfg.seed)
    opt = AdamOptimizer(
        flow.parameters,
        cfg.learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    )
    trajectory = TrainingTrajectory(
        [pe.name for pe in plan.entries], list(model.param_names)
    )
    last_report = None
    steps = max(cfg.epochs, 1) if cfg.epochs > 0 else 1
    for epoch in range(steps):
        opt.zero_grad()
        theta, stat_set = _epoch_statistics(flow, model, plan, cfg, train_rng)
        total, report = evaluate_loss(stat_set, expert)
        if not np.isfinite(report.total):
            raise DivergenceError(epoch, last_report)
        last_report = report
        flat = theta.data.reshape(-1, model.dim_theta)
        trajectory.append(
            epoch,
            report.total,
            report.values,
            flat.mean(axis=0),
            flat.std(axis=0),
        )
        if cfg.epochs == 0:
            break
        total.backward()
        if cfg.grad_clip is not None:
            opt.clip_gradients(cfg.grad_clip)
        opt.step()
    stats = final_statistics(flow, model, plan, eval_rng)
    return ReplicationResult(
        cfg.seed, flow, trajectory, trajectory.totals[-1], stats
    )


def run_replications(study, expert, seeds=None, out_dir=None):
    """Independent replications, one per seed; per-run rng streams come from
    the seed through :func:`split_run_streams`. Failures are recorded, not
    fatal: returns (results, failure manifest)."""
    seeds = list(study.seeds if seeds is None else seeds)
    if len(set(seeds)) != len(seeds):
        warnings.warn("duplicate seeds produce identical replications", UserWarning)
    results = []
    failures = []
    for seed in seeds:
        cfg = study.train_config.with_seed(seed)
        flow_rng, _, _ = split_run_streams(seed)
        flow = JointPriorFlow(study.flow_config, flow_rng)
        try:
            result = train(flow, study.model, study.plan, expert, cfg)
        except DivergenceError as exc:
            failures.append({"seed": seed, "error": str(exc), "epoch": exc.epoch})
            continue
        results.append(result)
        if out_dir is not None:
            write_run_artifacts(out_dir, study.study_id, result)
    return results, failures


def write_run_artifacts(out_dir, study_id, result):
    """Persist one replication: runs/<study>/<seed>/{trajectory.csv,
    result.json, checkpoint.bin}."""
    run_dir = Path(out_dir) / study_id / str(result.seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    result.trajectory.write_csv(run_dir / "trajectory.csv")
    ckpt = run_dir / "checkpoint.bin"
    save_flow(result.flow, ckpt)
    with open(run_dir / "result.json", "w", encoding="utf-8") as fh:
        json.dump(result.result_payload(ckpt), fh, indent=2, sort_keys=True)
    return run_dir
