"""Training-loop behavior: determinism, logging, divergence, artifacts."""

import json

import numpy as np
import pytest

from elicitflow.flow import JointPriorFlow, load_flow
from elicitflow.loss import LossReport
from elicitflow.oracle import simulate_expert
from elicitflow.studies import reduced_study, study_preset
from elicitflow.tensor import Tensor
from elicitflow.trainer import (
    AdamOptimizer,
    DivergenceError,
    TrainConfig,
    TrainingTrajectory,
    run_replications,
    split_run_streams,
    train,
    write_run_artifacts,
)


def tiny_study(study_id="M1", epochs=3, seed=1):
    study = reduced_study(study_id)
    cfg = TrainConfig(
        epochs=epochs,
        learning_rate=0.0005,
        batch_size=8,
        samples_per_prior=25,
        seed=seed,
        gumbel_tau=study.train_config.gumbel_tau,
    )
    return study, cfg


def make_expert(study, count=2000, seed=0):
    return simulate_expert(
        study.true_prior, study.model, study.plan, count, np.random.default_rng(seed)
    )


def build_flow(study, seed):
    flow_rng, _, _ = split_run_streams(seed)
    return JointPriorFlow(study.flow_config, flow_rng)


class TestAdam:
    def test_zero_gradient_is_noop(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = AdamOptimizer([p], lr=0.1)
        before = p.data.copy()
        opt.step()
        assert np.array_equal(p.data, before)

    def test_descends_quadratic(self):
        p = Tensor(np.array([5.0]), requires_grad=True)
        opt = AdamOptimizer([p], lr=0.1)
        from elicitflow.tensor import apply_elementwise, reduce

        for _ in range(200):
            opt.zero_grad()
            loss = reduce("sum", apply_elementwise("square", p))
            loss.backward()
            opt.step()
        assert abs(p.data[0]) < 0.5

    def test_clip_reduces_norm(self):
        p = Tensor(np.zeros(4), requires_grad=True)
        p.grad = np.full(4, 10.0)
        opt = AdamOptimizer([p], lr=0.1)
        norm = opt.clip_gradients(1.0)
        assert norm == pytest.approx(20.0)
        assert np.linalg.norm(p.grad) == pytest.approx(1.0)


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig(epochs=600, learning_rate=1e-4)
        assert (cfg.batch_size, cfg.samples_per_prior) == (128, 200)
        assert (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps) == (0.9, 0.999, 1e-7)

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=-1, learning_rate=1e-4)
        with pytest.raises(ValueError):
            TrainConfig(epochs=1, learning_rate=0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=1, learning_rate=1e-4, gumbel_tau=0)

    def test_roundtrip(self):
        cfg = TrainConfig(epochs=5, learning_rate=1e-3, gumbel_tau=None, grad_clip=100)
        assert TrainConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


class TestTrain:
    def test_zero_epochs_logs_initial_state(self):
        study, cfg = tiny_study(epochs=0)
        expert = make_expert(study)
        flow = build_flow(study, cfg.seed)
        before = [p.data.copy() for p in flow.parameters]
        result = train(flow, study.model, study.plan, expert, cfg)
        assert len(result.trajectory.rows) == 1
        assert result.trajectory.rows[0][0] == 0
        for p, b in zip(flow.parameters, before):
            assert np.array_equal(p.data, b)

    def test_deterministic_same_seed(self):
        study, cfg = tiny_study(epochs=3)
        expert = make_expert(study)
        r1 = train(build_flow(study, 1), study.model, study.plan, expert, cfg)
        r2 = train(build_flow(study, 1), study.model, study.plan, expert, cfg)
        assert r1.trajectory.rows == r2.trajectory.rows
        assert r1.final_statistics == r2.final_statistics

    def test_final_loss_equals_last_row(self):
        study, cfg = tiny_study(epochs=4)
        expert = make_expert(study)
        result = train(build_flow(study, 1), study.model, study.plan, expert, cfg)
        assert result.final_loss == result.trajectory.totals[-1]
        assert len(result.trajectory.rows) == 4

    def test_mismatched_expert_names_statistic(self):
        study, cfg = tiny_study()
        expert = make_expert(study)
        del expert.statistics["corr:moment_point"]
        with pytest.raises(ValueError, match="corr:moment_point"):
            train(build_flow(study, 1), study.model, study.plan, expert, cfg)

    def test_divergence_aborts_with_epoch(self, monkeypatch):
        study, cfg = tiny_study(epochs=5)
        expert = make_expert(study)

        calls = {"n": 0}
        import elicitflow.trainer as trainer_mod

        real = trainer_mod.evaluate_loss

        def nan_after_two(stat_set, exp, weights=None):
            total, report = real(stat_set, exp, weights)
            calls["n"] += 1
            if calls["n"] >= 3:
                bad = LossReport(report.names, report.kinds, report.weights,
                                 [float("nan")] * len(report.values))
                return total, bad
            return total, report

        monkeypatch.setattr(trainer_mod, "evaluate_loss", nan_after_two)
        with pytest.raises(DivergenceError) as err:
            train(build_flow(study, 1), study.model, study.plan, expert, cfg)
        assert err.value.epoch == 2
        assert err.value.last_report is not None
        assert np.isfinite(err.value.last_report.total)

    def test_loss_trend_decreases_short_m1(self):
        study, _ = tiny_study()
        cfg = TrainConfig(
            epochs=120,
            learning_rate=0.002,
            batch_size=16,
            samples_per_prior=50,
            seed=3,
            gumbel_tau=study.train_config.gumbel_tau,
        )
        expert = make_expert(study, count=4000)
        result = train(build_flow(study, 3), study.model, study.plan, expert, cfg)
        totals = np.array(result.trajectory.totals)
        head = totals[:12].mean()
        tail = totals[-12:].mean()
        assert tail < head

    def test_final_statistics_shape(self):
        study, cfg = tiny_study(epochs=2)
        expert = make_expert(study)
        result = train(build_flow(study, 1), study.model, study.plan, expert, cfg)
        assert set(result.final_statistics) == set(expert.statistics)
        q = result.final_statistics["y|x0:quantiles"]
        assert len(q["values"]) == 5
        assert q["levels"] == [0.05, 0.25, 0.5, 0.75, 0.95]


class TestTrajectoryCSV:
    def test_round_trip_lossless(self, tmp_path):
        study, cfg = tiny_study(epochs=3)
        expert = make_expert(study)
        result = train(build_flow(study, 1), study.model, study.plan, expert, cfg)
        path = tmp_path / "trajectory.csv"
        result.trajectory.write_csv(path)
        again = TrainingTrajectory.read_csv(path)
        assert again.header == result.trajectory.header
        assert again.rows == result.trajectory.rows

    def test_header_layout(self):
        t = TrainingTrajectory(["y|x0:quantiles", "corr:moment_point"], ["b0", "b1"])
        assert t.header == [
            "epoch", "loss_total",
            "loss_y|x0:quantiles", "loss_corr:moment_point",
            "mean_b0", "mean_b1", "sd_b0", "sd_b1",
        ]


class TestRunReplications:
    def test_two_seeds_differ(self, tmp_path):
        study, _ = tiny_study()
        study.train_config.epochs = 3
        study.train_config.batch_size = 8
        study.train_config.samples_per_prior = 25
        expert = make_expert(study)
        results, failures = run_replications(
            study, expert, seeds=[1, 2], out_dir=tmp_path
        )
        assert failures == []
        assert [r.seed for r in results] == [1, 2]
        a = results[0].flow.parameters[0].data
        b = results[1].flow.parameters[0].data
        assert not np.array_equal(a, b)
        for seed in (1, 2):
            run_dir = tmp_path / "M1" / str(seed)
            assert (run_dir / "trajectory.csv").exists()
            assert (run_dir / "result.json").exists()
            assert (run_dir / "checkpoint.bin").exists()

    def test_duplicate_seed_warns(self):
        study, _ = tiny_study()
        study.train_config.epochs = 1
        study.train_config.batch_size = 4
        study.train_config.samples_per_prior = 10
        expert = make_expert(study)
        with pytest.warns(UserWarning, match="duplicate"):
            run_replications(study, expert, seeds=[1, 1])

    def test_artifact_payload_readable(self, tmp_path):
        study, cfg = tiny_study(epochs=2)
        expert = make_expert(study)
        result = train(build_flow(study, cfg.seed), study.model, study.plan, expert, cfg)
        run_dir = write_run_artifacts(tmp_path, study.study_id, result)
        payload = json.loads((run_dir / "result.json").read_text())
        assert payload["seed"] == cfg.seed
        assert payload["final_loss"] == result.final_loss
        loaded = load_flow(run_dir / "checkpoint.bin")
        assert loaded.config.to_dict() == study.flow_config.to_dict()
