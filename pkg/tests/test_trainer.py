"""Optimizer oracles and training-loop contracts on a tiny corpus."""

import copy

import numpy as np
import pytest

from despoof import trainer as tr
from despoof.losses import LossWeights
from despoof.optim import NonFiniteGradient, OptState, optimizer_step
from despoof.params import ParamSet
from despoof.quality_nets import pretrain_dq


def tiny_cfg(**kw):
    base = dict(batch_size=6, learning_rate=3e-5, steps=4, seed=3, scale=32,
                weights=LossWeights(k=8), checkpoint_interval=2,
                dq_pretrain_epochs=2, dq_pretrain_lr=1e-3, precision="float32")
    base.update(kw)
    return tr.TrainConfig(**base)


class TestOptimizer:
    def one_param(self, value=1.0):
        ps = ParamSet("toy")
        ps.add("w", np.array([value]))
        return ps

    def test_zero_gradient_leaves_params_unchanged(self):
        for kind in ("adam", "sgd"):
            ps = self.one_param(0.7)
            state = OptState(kind)
            for _ in range(3):
                ps["w"].grad = np.zeros(1)
                optimizer_step(ps, state, 0.1)
            assert ps["w"].data[0] == 0.7

    def test_adam_converges_on_quadratic(self):
        # f(w) = w^2 from w = 1, 200 steps at lr 0.05
        ps = self.one_param(1.0)
        state = OptState("adam")
        for _ in range(200):
            ps["w"].grad = 2.0 * ps["w"].data
            optimizer_step(ps, state, 0.05)
        assert abs(ps["w"].data[0]) < 0.05

    def test_sgd_exact_step(self):
        ps = self.one_param(0.5)
        ps["w"].grad = np.array([0.2])
        optimizer_step(ps, OptState("sgd"), 0.1)
        assert np.isclose(ps["w"].data[0], 0.5 - 0.1 * 0.2)

    def test_nonfinite_gradient_names_parameter(self):
        ps = self.one_param()
        ps["w"].grad = np.array([np.nan])
        with pytest.raises(NonFiniteGradient, match="toy/w"):
            optimizer_step(ps, OptState("adam"), 0.1)

    def test_batch_size_one_rejected(self):
        with pytest.raises(tr.TrainError):
            tiny_cfg(batch_size=1)


@pytest.fixture(scope="module")
def trained_bits(tiny_train):
    cfg = tiny_cfg()
    nets, curve = tr.build_nets(cfg, tiny_train)
    return cfg, nets, curve


class TestPretrainDq:
    def test_loss_curve_decreases(self, tiny_train):
        cfg = tiny_cfg(dq_pretrain_epochs=5)
        _, curve = pretrain_dq(tiny_train, cfg)
        assert curve[4] < curve[0]

    def test_returns_frozen(self, trained_bits):
        _, nets, _ = trained_bits
        assert nets.dq.frozen
        assert all(not t.requires_grad for t in nets.dq.tensors())


class TestTrainStep:
    def test_alternation_contract(self, tiny_train, trained_bits):
        cfg, nets0, _ = trained_bits
        nets = copy.deepcopy(nets0)
        sums = {n: nets.__dict__[n].checksum() for n in ("ds", "dq", "vq")}
        row = tr.train_step(tiny_train, nets, OptState(), OptState(), cfg, step=1)
        assert nets.dq.checksum() == sums["dq"]          # judge never moves
        assert nets.ds.checksum() != sums["ds"]
        assert nets.vq.checksum() != sums["vq"]
        for fld in tr.LOSS_FIELDS[1:]:
            assert np.isfinite(float(row[fld])), fld

    def test_zero_learning_rate_freezes_everything(self, tiny_train, trained_bits):
        cfg, nets0, _ = trained_bits
        cfg0 = tiny_cfg(learning_rate=0.0)
        nets = copy.deepcopy(nets0)
        sums = {n: nets.__dict__[n].checksum() for n in ("ds", "dq", "vq")}
        tr.train_step(tiny_train, nets, OptState(), OptState(), cfg0, step=1)
        for n, s in sums.items():
            assert nets.__dict__[n].checksum() == s, n

    def test_five_step_smoke_rows(self, tiny_train, trained_bits):
        cfg, nets0, _ = trained_bits
        nets = copy.deepcopy(nets0)
        ods, ovq = OptState(), OptState()
        for step in range(1, 6):
            row = tr.train_step(tiny_train, nets, ods, ovq, cfg, step)
            assert set(row) == set(tr.LOSS_FIELDS)
            assert all(np.isfinite(float(row[f])) for f in tr.LOSS_FIELDS[1:])

    def test_unfrozen_dq_rejected(self, tiny_train, trained_bits):
        cfg, nets0, _ = trained_bits
        nets = copy.deepcopy(nets0)
        nets.dq.frozen = False
        with pytest.raises(tr.TrainError):
            tr.train_step(tiny_train, nets, OptState(), OptState(), cfg, 1)


class TestTrainLoop:
    def test_seeded_runs_bitwise_identical(self, tiny_train, tmp_path):
        outs = []
        for name in ("a", "b"):
            path, rows = tr.train(tiny_train, tiny_cfg(), str(tmp_path / name))
            outs.append((path, rows))
        bytes_a = open(outs[0][0], "rb").read()
        bytes_b = open(outs[1][0], "rb").read()
        assert bytes_a == bytes_b
        assert outs[0][1] == outs[1][1]

    def test_loss_csv_has_steps_plus_pretrain_rows(self, tiny_train, tmp_path):
        cfg = tiny_cfg()
        _, rows = tr.train(tiny_train, cfg, str(tmp_path / "run"))
        assert len(rows) == cfg.steps + cfg.dq_pretrain_epochs
        csv_lines = open(tmp_path / "run" / "loss_log.csv").read().strip().splitlines()
        assert csv_lines[0] == ",".join(tr.LOSS_FIELDS)
        assert len(csv_lines) == 1 + cfg.steps + cfg.dq_pretrain_epochs

    def test_resume_equals_uninterrupted(self, tiny_train, tmp_path):
        full_path, _ = tr.train(tiny_train, tiny_cfg(), str(tmp_path / "full"))
        half_path, _ = tr.train(tiny_train, tiny_cfg(steps=2), str(tmp_path / "half"))
        resumed_path, _ = tr.train(tiny_train, tiny_cfg(), str(tmp_path / "resumed"),
                                   resume=half_path)
        assert open(full_path, "rb").read() == open(resumed_path, "rb").read()

    def test_resume_rejects_other_config(self, tiny_train, tmp_path):
        half_path, _ = tr.train(tiny_train, tiny_cfg(steps=2), str(tmp_path / "h"))
        with pytest.raises(tr.TrainError):
            tr.train(tiny_train, tiny_cfg(seed=99), str(tmp_path / "r"),
                     resume=half_path)

    def test_unbalanced_corpus_rejected(self, tiny_train):
        live_only = copy.deepcopy(tiny_train)
        live_only.is_spoof[:] = False
        with pytest.raises(tr.TrainError):
            tr.train(live_only, tiny_cfg(), "/tmp/unused")

    def test_checkpoint_roundtrip(self, tiny_train, tmp_path):
        cfg = tiny_cfg(steps=2)
        path, _ = tr.train(tiny_train, cfg, str(tmp_path / "ck"))
        nets, ods, ovq, meta = tr.load_checkpoint(path, cfg)
        assert meta["step"] == 2 and nets.dq.frozen
        assert ods.t == 2 and ovq.t == 2
