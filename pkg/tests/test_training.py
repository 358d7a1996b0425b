import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ergorisk.autodiff import Rng, Tensor, precision
from ergorisk.errors import ConfigError, DataError, DomainError, NumericFault
from ergorisk.model import ViskGatConfig, load_model
from ergorisk.training import (
    AdamWState,
    TrainConfig,
    adamw_step,
    cross_entropy_smoothed,
    evaluate,
    format_log,
    load_dataset,
    onecycle_lr,
    stratified_split,
    train,
)


class TestLoss:
    @given(st.floats(0.0, 0.99), st.lists(st.integers(0, 7), min_size=1, max_size=9), st.floats(-5, 5))
    def test_uniform_logits_ln8(self, smoothing, labels, c):
        logits = np.full((len(labels), 8), c)
        with precision(np.float64):
            loss = cross_entropy_smoothed(Tensor(logits), labels, smoothing).item()
        assert abs(loss - math.log(8)) <= 1e-6

    def test_confident_correct_goes_to_zero(self):
        logits = np.full((2, 8), -60.0)
        logits[[0, 1], [3, 5]] = 60.0
        with precision(np.float64):
            assert cross_entropy_smoothed(Tensor(logits), [3, 5], 0.0).item() < 1e-12

    def test_per_sample_oracle(self):
        rng = np.random.default_rng(0)
        logits = rng.normal(0, 2, (12, 8))
        labels = rng.integers(0, 8, 12)
        s = 0.1
        total = 0.0
        for z, y in zip(logits, labels):
            logp = z - math.log(sum(math.exp(v) for v in z))
            q = [s / 8 + (1 - s if k == y else 0.0) for k in range(8)]
            total += -sum(qk * lk for qk, lk in zip(q, logp))
        with precision(np.float64):
            got = cross_entropy_smoothed(Tensor(logits), labels, s).item()
        assert got == pytest.approx(total / 12, abs=1e-6)

    @pytest.mark.parametrize("labels", [[8], [-1]])
    def test_label_range(self, labels):
        with pytest.raises(DomainError):
            cross_entropy_smoothed(Tensor(np.zeros((1, 8))), labels, 0.1)


class TestAdamW:
    def _p(self, v):
        return {"w": Tensor(np.asarray(v, dtype=np.float64), requires_grad=True)}

    def test_zero_grad_no_decay_unchanged(self):
        p = self._p([1.0, -2.0])
        adamw_step(p, {"w": np.zeros(2)}, AdamWState(), lr=0.1, weight_decay=0.0)
        assert np.array_equal(p["w"].data, [1.0, -2.0])

    def test_hand_stepped(self):
        p = self._p([1.0])
        adamw_step(p, {"w": np.ones(1)}, AdamWState(), lr=0.1, weight_decay=0.0)
        assert abs(p["w"].data[0] - 0.9) <= 1e-3

    def test_decoupled_decay_only(self):
        p = self._p([2.0, -3.0])
        adamw_step(p, {"w": np.zeros(2)}, AdamWState(), lr=0.1, weight_decay=0.5)
        assert np.array_equal(p["w"].data, np.array([2.0, -3.0]) * (1 - 0.05))

    def test_mismatch(self):
        with pytest.raises(ConfigError):
            adamw_step(self._p([1.0]), {"v": np.zeros(1)}, AdamWState(), 0.1)
        with pytest.raises(ConfigError):
            adamw_step(self._p([1.0]), {"w": np.zeros(2)}, AdamWState(), 0.1)

    @pytest.mark.parametrize("seed", range(10))
    def test_step_reduces_convex_quadratic(self, seed):
        rng = Rng(seed)
        a = rng.uniform(0.5, 3.0, 5)
        target = rng.normal(0, 1, 5)
        p = self._p(rng.normal(0, 1, 5))

        def loss(x):
            return float(np.sum(a * (x - target) ** 2))

        before = loss(p["w"].data)
        g = 2 * a * (p["w"].data - target)
        adamw_step(p, {"w": g}, AdamWState(), lr=1e-3, weight_decay=0.0)
        assert loss(p["w"].data) < before


class TestSchedule:
    cfg = TrainConfig()

    def test_anchors(self):
        total = 1000
        assert onecycle_lr(0, total, self.cfg) == pytest.approx(3e-7, rel=1e-9)
        assert onecycle_lr(math.ceil(0.1 * total), total, self.cfg) == pytest.approx(3e-4, rel=1e-9)
        assert onecycle_lr(total, total, self.cfg) == pytest.approx(3e-7, rel=1e-9)

    @pytest.mark.parametrize("total", [1, 7, 10, 123, 1600])
    def test_unimodal(self, total):
        lrs = [onecycle_lr(s, total, self.cfg) for s in range(total + 1)]
        peak = int(np.argmax(lrs))
        assert all(x <= y for x, y in zip(lrs[:peak], lrs[1:peak + 1]))
        assert all(x >= y for x, y in zip(lrs[peak:], lrs[peak + 1:]))
        assert max(lrs) <= 3e-4 * (1 + 1e-12) and min(lrs) >= 3e-7 * (1 - 1e-12)

    @pytest.mark.parametrize("step", [-1, 11])
    def test_out_of_range(self, step):
        with pytest.raises(DomainError):
            onecycle_lr(step, 10, self.cfg)


class TestSplit:
    def test_exact_arithmetic(self):
        labels = np.repeat(np.arange(8), 10)
        sp = stratified_split(labels, (0.7, 0.1, 0.2), seed=0)
        assert (len(sp.train), len(sp.val), len(sp.test)) == (56, 8, 16)
        for c in range(8):
            assert [int(np.sum(labels[getattr(sp, n)] == c)) for n in ("train", "val", "test")] == [7, 1, 2]

    @given(st.lists(st.integers(0, 7), max_size=120), st.integers(0, 2**32 - 1))
    def test_disjoint_cover_within_one(self, labels, seed):
        labels = np.array(labels, dtype=np.int64)
        sp = stratified_split(labels, (0.7, 0.1, 0.2), seed)
        parts = [set(sp.train), set(sp.val), set(sp.test)]
        assert sum(map(len, parts)) == len(labels)
        assert set().union(*parts) == set(range(len(labels)))
        for c in np.unique(labels):
            n = int(np.sum(labels == c))
            for idx, f in zip((sp.train, sp.val, sp.test), (0.7, 0.1, 0.2)):
                assert abs(int(np.sum(labels[idx] == c)) - f * n) <= 1

    def test_seeded(self):
        labels = np.array([0, 1, 2, 3] * 9)
        assert stratified_split(labels, seed=4) == stratified_split(labels, seed=4)
        assert stratified_split(labels, seed=4) != stratified_split(labels, seed=5)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(split_fractions=(0.5, 0.1, 0.1))
        with pytest.raises(ConfigError):
            TrainConfig(peak_lr=0.0)


class TestLoop:
    def _cfg(self, **kw):
        return TrainConfig(**{"epochs": 2, "batch_size": 8, "seed": 1, **kw})

    def test_dataset_loading(self, synth_dir):
        d = load_dataset(synth_dir)
        assert len(d) == 48 and d.images.shape == (48, 3, 64, 64) and d.poses.shape == (48, 33, 2)
        assert d.labels.min() >= 0 and d.labels.max() <= 7

    def test_missing_dataset(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path)

    def test_deterministic_log_and_checkpoint(self, synth_dir, tmp_path):
        d = load_dataset(synth_dir)
        m = ViskGatConfig.desk_small()
        r1 = train(m, self._cfg(), d, out=tmp_path / "a.ergk")
        r2 = train(m, self._cfg(), d, out=tmp_path / "b.ergk")
        assert format_log(r1.log) == format_log(r2.log)
        assert (tmp_path / "a.ergk").read_bytes() == (tmp_path / "b.ergk").read_bytes()
        assert format_log(r1.log).splitlines()[0] == "epoch,lr,train_loss,train_acc,val_loss,val_acc"
        params, cfg, meta = load_model(tmp_path / "a.ergk")
        assert cfg == m and meta["best_epoch"] == r1.best_epoch

    def test_evaluate_deterministic(self, synth_dir):
        d = load_dataset(synth_dir)
        m = ViskGatConfig.desk_small()
        r = train(m, self._cfg(epochs=1), d)
        a = evaluate(r.params, m, d, r.split.test).to_json()
        b = evaluate(r.params, m, d, r.split.test).to_json()
        assert a == b and a["num_samples"] == len(r.split.test)

    def test_nan_loss_aborts_with_context(self, synth_dir):
        d = load_dataset(synth_dir)
        d.images[:] = np.nan
        with pytest.raises(NumericFault, match="epoch 1, step 0"):
            train(ViskGatConfig.desk_small(), self._cfg(), d)

    def test_empty(self, synth_dir):
        d = load_dataset(synth_dir).subset([])
        with pytest.raises(DataError):
            train(ViskGatConfig.desk_small(), self._cfg(), d)

    @pytest.mark.slow
    def test_loss_trend_nonincreasing(self, synth_dir):
        d = load_dataset(synth_dir)
        cfg = TrainConfig(epochs=60, batch_size=16, seed=0, split_fractions=(1.0, 0.0, 0.0))
        r = train(ViskGatConfig.desk_small(), cfg, d)
        losses = np.array([row["train_loss"] for row in r.log])
        windows = losses.reshape(-1, 10).mean(axis=1)
        assert np.all(np.diff(windows) <= 0)
