import numpy as np
import pytest

from iol.config import ConfigError, RunConfig, dumps_toml, from_dict, load_config, override
from iol.model import ModelConfig, init_model
from iol.persist import Checkpoint, load_checkpoint, save_checkpoint
from iol.trainer import (
    TrainConfig,
    TrainReport,
    _lr_at,
    evaluate_objective,
    infer_all,
    infer_beliefs,
    snapshot,
    train,
)
from iol.trajectory_store import DatasetSplit, ValidationError, split

from conftest import random_records

TINY = ModelConfig(d=3, memory_dim=2, hidden=8, lstm_hidden=6)


@pytest.fixture
def dataset(small_corpus):
    corpus, _ = small_corpus
    return split(corpus, seed=0)


def fit(dataset, **kw):
    cfg = TrainConfig(**{"epochs": 2, "batch_size": 8, "seed": 0, **kw})
    return train(dataset, cfg, TINY)


class TestTrain:
    def test_zero_lr_leaves_parameters(self, dataset):
        start = snapshot(init_model(TINY, seed=0))
        model, _, _ = fit(dataset, lr=0.0)
        for name, value in snapshot(model).items():
            np.testing.assert_array_equal(value, start[name])

    def test_zero_epochs_returns_initialisation(self, dataset):
        start = snapshot(init_model(TINY, seed=0))
        model, report, _ = fit(dataset, epochs=0)
        assert report.epoch == []
        for name, value in snapshot(model).items():
            np.testing.assert_array_equal(value, start[name])

    def test_bit_identical_reruns(self, dataset):
        _, r1, _ = fit(dataset)
        _, r2, _ = fit(dataset)
        assert r1.to_dict(include_timing=False) == r2.to_dict(include_timing=False)

    def test_objective_is_nll_plus_kl(self, dataset):
        _, report, _ = fit(dataset)
        assert len(report.step_objective) == 2 * 3  # 24 training trajectories, batches of 8
        for obj, nll, kl in zip(report.step_objective, report.step_nll, report.step_kl):
            assert obj == nll + kl
        for obj, nll, kl in zip(report.val_objective, report.val_nll, report.val_kl):
            assert obj == nll + kl

    def test_objective_decreases(self, dataset):
        _, report, _ = fit(dataset, epochs=15, lr=1e-2)
        assert report.val_objective[-1] < report.val_objective[0]

    def test_kl_warmup_weight(self, dataset):
        _, report, _ = fit(dataset, epochs=4, kl_warmup_epochs=2)
        assert report.kl_weight[0] < report.kl_weight[1] <= 1.0
        assert report.kl_weight[2:] == [1.0, 1.0]

    def test_best_epoch_parameters_returned(self, dataset):
        model, report, _ = fit(dataset, epochs=6, lr=5e-2)
        assert report.best_epoch == int(np.argmin(report.val_objective))
        nll, kl = evaluate_objective(model, dataset.validation, [0, 2])
        assert nll + kl == pytest.approx(min(report.val_objective), abs=1e-10)

    def test_early_stopping(self, dataset):
        # a huge step size makes validation worse than at epoch 0 straight away
        _, report, _ = fit(dataset, epochs=30, lr=1.0, patience=2, clip_norm=1e6)
        assert report.stopped_early
        assert len(report.epoch) == report.best_epoch + 3

    def test_resume_continues_epochs(self, dataset):
        cfg = TrainConfig(epochs=2, batch_size=8, seed=0)
        model, report, opt = train(dataset, cfg, TINY)
        _, report, opt = train(dataset, cfg, model=model, optimizer=opt, history=report)
        assert report.epoch == [0, 1, 2, 3]
        assert opt.step == 4 * 3

    def test_empty_training_split(self):
        empty = DatasetSplit([], random_records(2), [], None)
        with pytest.raises(ValidationError, match="empty"):
            train(empty, TrainConfig(), TINY)

    def test_dimension_mismatch(self, dataset):
        model = init_model(ModelConfig(d=4, memory_dim=2, hidden=4, lstm_hidden=4))
        with pytest.raises(ValidationError, match="d=4"):
            train(dataset, TrainConfig(epochs=1), model=model)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(lr_schedule="step")

    def test_cosine_schedule_endpoints(self):
        cfg = TrainConfig(lr=1e-2, epochs=11, lr_schedule="cosine", min_lr_ratio=0.1)
        assert _lr_at(cfg, 0) == pytest.approx(1e-2)
        assert _lr_at(cfg, 10) == pytest.approx(1e-3)
        assert all(_lr_at(cfg, e) > _lr_at(cfg, e + 1) for e in range(10))

    def test_report_round_trip(self, dataset):
        _, report, _ = fit(dataset)
        back = TrainReport.from_dict(report.to_dict())
        assert back == report
        assert "wall_clock" not in report.to_dict(include_timing=False)


class TestBeliefs:
    def test_one_belief_per_step(self):
        model = init_model(TINY, seed=1)
        record = random_records(1, horizon=(7, 7), seed=2)[0]
        beliefs = infer_beliefs(model, record)
        assert [b.t for b in beliefs] == list(range(7))
        assert all(0 < b.pi < 1 for b in beliefs)

    def test_single_step(self):
        model = init_model(TINY, seed=1)
        assert len(infer_beliefs(model, random_records(1, horizon=(1, 1))[0])) == 1

    def test_deterministic(self):
        model = init_model(TINY, seed=1)
        record = random_records(1, horizon=(5, 5), seed=3)[0]
        a, b = infer_beliefs(model, record), infer_beliefs(model, record)
        for u, v in zip(a, b):
            assert u.tau == v.tau
            np.testing.assert_array_equal(u.omega1, v.omega1)

    def test_tau_is_omega_at_context(self):
        model = init_model(TINY, seed=1)
        record = random_records(1, horizon=(5, 5), seed=3)[0]
        for b in infer_beliefs(model, record):
            assert b.tau == pytest.approx(float(b.omega1 @ record.x[b.t]), abs=1e-12)

    def test_batched_matches_single(self):
        model = init_model(TINY, seed=1)
        records = random_records(9, seed=4)
        many = infer_all(model, records, batch_size=4)
        assert list(many) == [r.id for r in records]
        for r in records:
            single = infer_beliefs(model, r)
            np.testing.assert_allclose(many[r.id].tau, [b.tau for b in single], atol=1e-12)

    def test_wrong_dimension(self):
        with pytest.raises(ValidationError):
            infer_beliefs(init_model(TINY), random_records(1, d=4)[0])


class TestCheckpoint:
    def test_round_trip(self, dataset, tmp_path):
        model, report, opt = fit(dataset)
        save_checkpoint(tmp_path / "c.json", Checkpoint(model, dataset.standardization, opt, report))
        back = load_checkpoint(tmp_path / "c.json")
        assert back.model.config == model.config
        for name, value in snapshot(model).items():
            np.testing.assert_array_equal(snapshot(back.model)[name], value)
        assert back.report.to_dict(include_timing=False) == report.to_dict(include_timing=False)
        assert back.optimizer.step == opt.step
        record = dataset.test[0]
        assert [b.tau for b in infer_beliefs(back.model, record)] == \
            [b.tau for b in infer_beliefs(model, record)]


class TestConfig:
    def test_defaults(self):
        config = RunConfig()
        assert config.sim.n_traj == 2000 and config.sim.horizon == 50
        assert config.sim.learning_rate == 0.05

    def test_lambda_alias(self, tmp_path):
        (tmp_path / "c.toml").write_text("[sim]\nlambda = 0.2\n")
        config = load_config(tmp_path / "c.toml")
        assert config.sim.learning_rate == 0.2
        assert config.to_dict()["sim"]["lambda"] == 0.2

    def test_internal_name_rejected(self):
        with pytest.raises(ConfigError, match="sim.learning_rate"):
            from_dict({"sim": {"learning_rate": 0.1}})

    def test_unknown_key_and_section(self):
        with pytest.raises(ConfigError, match="train.lrr"):
            from_dict({"train": {"lrr": 0.1}})
        with pytest.raises(ConfigError, match="optim"):
            from_dict({"optim": {}})

    def test_type_errors(self):
        with pytest.raises(ConfigError, match="integer"):
            from_dict({"train": {"epochs": 2.5}})
        with pytest.raises(ConfigError, match="true or false"):
            from_dict({"model": {"residual_transition": 1}})

    def test_int_promoted_to_float(self):
        assert from_dict({"train": {"lr": 1}}).train.lr == 1.0

    def test_malformed_toml(self, tmp_path):
        (tmp_path / "c.toml").write_text("[train\n")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.toml")

    def test_override(self):
        config = RunConfig()
        override(config, "sim.lambda", 0.3)
        override(config, "model.memory_dim", 4)
        assert config.sim.learning_rate == 0.3 and config.model.memory_dim == 4
        with pytest.raises(ConfigError):
            override(config, "model.depth", 2)

    def test_dumps_round_trip(self, tmp_path):
        config = from_dict({"train": {"epochs": 3, "lr_schedule": "cosine"}, "sim": {"lambda": 0.1},
                            "evaluate": {"baselines": ["rcal"]}})
        (tmp_path / "c.toml").write_text(dumps_toml(config))
        assert load_config(tmp_path / "c.toml") == config
