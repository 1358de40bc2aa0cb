import math

import numpy as np
import pytest
import torch

from stimpute.data import DataConfig, SyntheticSpec, prepare_windows, synthesize
from stimpute.diffusion import build_schedule
from stimpute.engine import (
    CheckpointError,
    TrainConfig,
    impute_dataset,
    load_checkpoint,
    lr_at,
    save_checkpoint,
    train,
)
from stimpute.masking import MaskPlan, simulate_eval_missing
from stimpute.model import ModelConfig, NoisePredictor, predict_noise

SMALL = dict(channels=8, heads=2, layers=1, virtual_nodes=2, num_steps=10)


@pytest.fixture(scope="module")
def corpus():
    spec = SyntheticSpec(node_count=5, window_length=8, n_steps=160, missing_rate=0.1)
    c = synthesize(spec)
    windows, adj, stats = prepare_windows(
        c.values, c.observed_mask, c.node_ids, c.timestamps, c.adjacency, DataConfig(window_length=8)
    )
    return windows, adj, stats


class TestSchedule:
    def test_lr_trace(self):
        cfg = TrainConfig(epochs=200)
        trace = [lr_at(e, cfg) for e in range(200)]
        assert trace[:150] == [1e-3] * 150
        assert all(math.isclose(v, 1e-4) for v in trace[150:180])
        assert all(math.isclose(v, 1e-5) for v in trace[180:])

    def test_lr_trace_odd_epochs(self):
        cfg = TrainConfig(epochs=30)
        trace = [lr_at(e, cfg) for e in range(30)]
        assert trace[22] == 1e-3 and math.isclose(trace[23], 1e-4)  # ceil(22.5) = 23
        assert math.isclose(trace[27], 1e-5) and math.isclose(trace[26], 1e-4)

    def test_invalid(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=0)
        with pytest.raises(ValueError):
            TrainConfig(milestones=(0.9, 0.5))


class TestTrain:
    def test_zero_epochs_leaves_params(self, corpus):
        windows, adj, _ = corpus
        torch.manual_seed(0)
        model = NoisePredictor(ModelConfig(n_nodes=5, **SMALL))
        before = {k: v.clone() for k, v in model.state_dict().items()}
        result = train(windows["train"], adj, model.cfg, TrainConfig(epochs=0), model=model)
        assert result.losses == []
        for k, v in result.model.state_dict().items():
            assert torch.equal(v, before[k])

    def test_deterministic(self, corpus):
        windows, adj, _ = corpus
        cfg = TrainConfig(epochs=2, batch_size=4, seed=3)
        a = train(windows["train"], adj, ModelConfig(n_nodes=5, **SMALL), cfg, val_windows=windows["val"])
        b = train(windows["train"], adj, ModelConfig(n_nodes=5, **SMALL), cfg, val_windows=windows["val"])
        assert a.losses == b.losses and a.val_losses == b.val_losses
        for (k, v), (_, w) in zip(a.model.state_dict().items(), b.model.state_dict().items()):
            assert torch.equal(v, w), k
        assert len(a.lrs) == 2 and all(np.isfinite(a.losses))

    def test_empty_training_set(self, corpus):
        _, adj, _ = corpus
        with pytest.raises(ValueError):
            train([], adj, ModelConfig(n_nodes=5, **SMALL), TrainConfig(epochs=1))


class TestImpute:
    def test_empty_plan_contributes_nothing(self, corpus):
        windows, adj, stats = corpus
        torch.manual_seed(0)
        model = NoisePredictor(ModelConfig(n_nodes=5, **SMALL))
        w = windows["test"][0]
        plan = MaskPlan.from_target(w, np.zeros_like(w.values))
        report = impute_dataset([w], adj, model, [plan], stats, n_samples=3)
        assert report.metrics["target_cells"] == 0 and "mae" not in report.metrics
        observed = w.observed_mask > 0
        raw = w.values * stats.per_node_std[:, None] + stats.per_node_mean[:, None]
        assert np.allclose(report.results[0].median[observed], raw[observed])

    def test_seeded_metrics_repeat(self, corpus):
        windows, adj, stats = corpus
        torch.manual_seed(0)
        model = NoisePredictor(ModelConfig(n_nodes=5, **SMALL))
        ws = windows["test"][:2]
        plans = [simulate_eval_missing(w, "point", np.random.default_rng(i)) for i, w in enumerate(ws)]
        a = impute_dataset(ws, adj, model, plans, stats, n_samples=4, seed=5)
        b = impute_dataset(ws, adj, model, plans, stats, n_samples=4, seed=5)
        assert a.metrics == b.metrics
        assert a.metrics["target_cells"] > 0

    def test_node_mismatch(self, corpus):
        windows, adj, stats = corpus
        model = NoisePredictor(ModelConfig(n_nodes=6, **SMALL))
        w = windows["test"][0]
        with pytest.raises(CheckpointError):
            impute_dataset([w], adj, model, [MaskPlan.from_target(w, np.zeros_like(w.values))], stats)


class TestCheckpoint:
    def _model(self):
        torch.manual_seed(1)
        model = NoisePredictor(ModelConfig(n_nodes=5, **SMALL))
        torch.nn.init.normal_(model.head2.weight)
        return model

    def test_byte_identical_resave(self, tmp_path, corpus):
        _, _, stats = corpus
        sched = build_schedule(10)
        save_checkpoint(tmp_path / "a.safetensors", self._model(), sched, stats, {"seed": 1})
        model, sched2, stats2, extra = load_checkpoint(tmp_path / "a.safetensors")
        save_checkpoint(tmp_path / "b.safetensors", model, sched2, stats2, extra)
        assert (tmp_path / "a.safetensors").read_bytes() == (tmp_path / "b.safetensors").read_bytes()
        assert extra == {"seed": 1}
        assert np.array_equal(stats2.per_node_mean, stats.per_node_mean)
        assert np.array_equal(sched2.beta, sched.beta)

    def test_predictions_bit_identical(self, tmp_path):
        model = self._model().eval()
        save_checkpoint(tmp_path / "m.safetensors", model, build_schedule(10))
        loaded, *_ = load_checkpoint(tmp_path / "m.safetensors")
        loaded.eval()
        gen = torch.Generator().manual_seed(0)
        x, c = torch.randn(3, 5, 8, generator=gen), torch.randn(3, 5, 8, generator=gen)
        adj = torch.rand(5, 5, generator=gen)
        t = torch.tensor([1, 5, 10])
        assert torch.equal(predict_noise(model, x, c, adj, t), predict_noise(loaded, x, c, adj, t))

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "m.safetensors"
        save_checkpoint(path, self._model(), build_schedule(10))
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nope.safetensors")
