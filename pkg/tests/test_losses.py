"""Loss-function values, gradients, and the phase-isolation contracts."""

import numpy as np
import pytest

from despoof import losses as L
from despoof import quality_nets as qn
from despoof import tensor_core as tc
from despoof.params import rng_from
from despoof.tensor_core import Tensor

S = 32


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


class TestMagnitudeLoss:
    def test_zero_noise(self):
        n = leaf(np.zeros((2, 4, 4, 6)))
        assert L.magnitude_loss(n, [0, 1]).item() == 0.0

    def test_hand_value(self):
        arr = np.full((1, 2, 2, 2), 0.2)
        arr.reshape(-1)[::2] = -0.2
        assert np.isclose(L.magnitude_loss(leaf(arr), [0]).item(), 0.2)

    def test_no_live_samples_gives_zero(self):
        n = leaf(np.random.default_rng(0).random((2, 4, 4, 6)))
        out = L.magnitude_loss(n, [])
        assert out.item() == 0.0
        tc.backward(out)
        assert n.grad is None  # constant: nothing recorded

    def test_gradient_sign_over_count_on_live(self):
        arr = np.random.default_rng(1).standard_normal((3, 2, 2, 1))
        n = leaf(arr)
        tc.backward(L.magnitude_loss(n, [0, 2]))
        count = 2 * 4  # two live samples, 4 values each
        assert np.allclose(n.grad[0], np.sign(arr[0]) / count)
        assert np.all(n.grad[1] == 0.0)
        err = tc.grad_check(lambda: L.magnitude_loss(n, [0, 2]), [n])
        assert err < 1e-4


class TestZeroOneMapLoss:
    def test_perfect_prediction(self):
        m = np.ones((2, 4, 4, 1))
        assert L.zero_one_map_loss(leaf(m), m).item() == 0.0

    def test_half_prediction(self):
        pred = leaf(np.full((2, 4, 4, 1), 0.5))
        target = np.zeros((2, 4, 4, 1))
        target[1] = 1.0
        assert np.isclose(L.zero_one_map_loss(pred, target).item(), 0.5)

    def test_shape_mismatch(self):
        with pytest.raises(tc.ShapeError):
            L.zero_one_map_loss(leaf(np.zeros((1, 4, 4, 1))), np.zeros((1, 2, 2, 1)))

    def test_gradient(self):
        pred = leaf(np.random.default_rng(2).random((2, 4, 4, 1)) + 0.1)
        target = np.zeros((2, 4, 4, 1))
        err = tc.grad_check(lambda: L.zero_one_map_loss(pred, target), [pred])
        assert err < 1e-4


def naive_dft_mag(img):
    h, w = img.shape
    out = np.zeros((h, w), dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            ph = np.exp(-2j * np.pi * (u * np.arange(h)[:, None] / h
                                       + v * np.arange(w)[None, :] / w))
            out[u, v] = (img * ph).sum()
    return np.abs(out)


class TestRepetitiveLoss:
    def sinusoid_noise(self, a=0.3, f=12):
        n = np.zeros((1, S, S, 6))
        n[0, :, :, 0] = a * np.cos(2 * np.pi * f * np.arange(S) / S)[None, :]
        return n

    def test_zero_noise(self):
        n = leaf(np.zeros((2, S, S, 6)))
        assert L.repetitive_loss(n, np.array([True, False]), 8).item() == 0.0

    def test_live_sinusoid_value_and_oracle(self):
        a, f, k = 0.3, 12, 8
        arr = self.sinusoid_noise(a, f)
        val = L.repetitive_loss(leaf(arr), np.array([False]), k).item()
        assert np.isclose(val, S * S * a / 2)
        # independent naive-DFT oracle of the masked peak
        mag = np.roll(naive_dft_mag(arr[0, :, :, 0]), (S // 2, S // 2), axis=(0, 1))
        lo, hi = S // 2 - k // 2, S // 2 + k // 2
        mag[lo:hi, lo:hi] = 0.0
        assert np.isclose(val, mag.max(), atol=1e-8)

    def test_spoof_sign_flip(self):
        arr = self.sinusoid_noise()
        live = L.repetitive_loss(leaf(arr), np.array([False]), 8).item()
        spoof = L.repetitive_loss(leaf(arr), np.array([True]), 8).item()
        assert np.isclose(spoof, -live)

    def test_invalid_k(self):
        n = leaf(np.zeros((1, S, S, 6)))
        for k in (0, 7, S):
            with pytest.raises(ValueError):
                L.repetitive_loss(n, np.array([True]), k)

    def test_low_frequency_perturbation_inside_mask_is_invisible(self):
        arr = self.sinusoid_noise(a=0.3, f=12)
        low = 0.05 * np.cos(2 * np.pi * 2 * np.arange(S) / S)  # 2 cycles < k/2
        arr2 = arr.copy()
        arr2[0, :, :, 0] += low[None, :]
        flags = np.array([False])
        a = L.repetitive_loss(leaf(arr), flags, 8).item()
        b = L.repetitive_loss(leaf(arr2), flags, 8).item()
        assert np.isclose(a, b, atol=1e-9)

    def test_gradient(self):
        arr = self.sinusoid_noise(a=0.4, f=10) + 0.01
        n = leaf(arr)
        flags = np.array([True])
        err = tc.grad_check(lambda: L.repetitive_loss(n, flags, 8), [n],
                            max_entries_per_param=64,
                            rng=np.random.default_rng(0))
        assert err < 1e-4

    def test_batch_average(self):
        arr = np.concatenate([self.sinusoid_noise(), self.sinusoid_noise()])
        flags = np.array([True, False])
        val = L.repetitive_loss(leaf(arr), flags, 8).item()
        assert np.isclose(val, 0.0, atol=1e-9)  # -p/2 + p/2


class TestDqLoss:
    def frozen_dq(self):
        ps = qn.build_dq_params(rng_from(0, 1), np.float64, factor=0.05)
        ps.freeze()
        return ps

    def test_requires_frozen(self):
        ps = qn.build_dq_params(rng_from(0, 1), np.float64, factor=0.05)
        with pytest.raises(ValueError):
            L.dq_loss(leaf(np.zeros((2, 16, 16, 6))), np.zeros((2, 2, 2, 1)), ps)

    def test_exact_depth_gives_zero(self):
        dq = self.frozen_dq()
        x = leaf(np.random.default_rng(3).random((2, 16, 16, 6)))
        pred = qn.dq_forward(dq, x.detach(), mode="eval")
        assert L.dq_loss(x, pred.data.copy(), dq).item() == 0.0

    def test_gradient_reaches_ds_side_not_dq(self):
        dq = self.frozen_dq()
        x = leaf(np.random.default_rng(4).random((2, 16, 16, 6)))
        target = np.random.default_rng(5).random((2, 2, 2, 1))
        loss = L.dq_loss(x, target, dq)
        tc.backward(loss)
        assert x.grad is not None
        assert all(t.grad is None for t in dq.tensors())
        err = tc.grad_check(lambda: L.dq_loss(x, target, dq), [x],
                            max_entries_per_param=24,
                            rng=np.random.default_rng(1))
        assert err < 1e-4


class TestVqLosses:
    def vq(self, dtype=np.float64, zero_head=False):
        ps = qn.build_vq_params(rng_from(0, 2), 16, dtype)
        if zero_head:
            ps["fc4-2/w"].data[...] = 0.0
            ps["fc4-2/b"].data[...] = 0.0
        return ps

    def test_uniform_discriminator_two_ln2(self):
        vq = self.vq(zero_head=True)  # logits exactly (0,0): p = 0.5 everywhere
        r = np.random.default_rng(6)
        real = Tensor(r.random((2, 16, 16, 6)))
        synth = Tensor(r.random((2, 16, 16, 6)))
        val = L.vq_discriminator_loss(real, synth, vq, np.random.default_rng(0))
        assert np.isclose(val.item(), 2 * np.log(2.0))

    def test_confident_correct_discriminator_loss_vanishes(self):
        # CE -> 0+ as p(correct) -> 1; the discriminator terms are exactly CEs
        logits = Tensor(np.array([[30.0, -30.0]]))
        assert tc.softmax_ce(logits, np.array([0])).item() < 1e-12

    def test_empty_batch_rejected(self):
        vq = self.vq()
        with pytest.raises(ValueError):
            L.vq_discriminator_loss(Tensor(np.zeros((0, 16, 16, 6))),
                                    Tensor(np.zeros((2, 16, 16, 6))), vq,
                                    np.random.default_rng(0))
        with pytest.raises(ValueError):
            L.vq_generator_loss(Tensor(np.zeros((0, 16, 16, 6))), vq)

    def test_generator_uniform_ln2(self):
        vq = self.vq(zero_head=True)
        synth = Tensor(np.random.default_rng(7).random((3, 16, 16, 6)))
        assert np.isclose(L.vq_generator_loss(synth, vq).item(), np.log(2.0))

    def test_discriminator_gradient_over_vq_params(self):
        vq = self.vq()
        r = np.random.default_rng(8)
        real = Tensor(r.random((2, 16, 16, 6)))
        synth = Tensor(r.random((2, 16, 16, 6)))

        def f():
            return L.vq_discriminator_loss(real, synth, vq,
                                           np.random.default_rng(123))

        err = tc.grad_check(f, vq.trainable(), max_entries_per_param=3,
                            rng=np.random.default_rng(2))
        assert err < 1e-4

    def test_generator_gradient_flows_to_input_only(self):
        vq = self.vq()
        synth = leaf(np.random.default_rng(9).random((2, 16, 16, 6)))
        loss = L.vq_generator_loss(synth, vq)
        tc.backward(loss)
        assert synth.grad is not None
        assert all(t.grad is None for t in vq.tensors())
        err = tc.grad_check(lambda: L.vq_generator_loss(synth, vq), [synth],
                            max_entries_per_param=24,
                            rng=np.random.default_rng(3))
        assert err < 1e-4


class TestTotalCombination:
    def test_all_zero(self):
        comps = {n: Tensor(np.zeros(())) for n in L.COMPONENT_ORDER}
        assert L.combine_total(comps, L.LossWeights()).item() == 0.0

    def test_unit_components_default_weights(self):
        comps = {n: Tensor(np.ones(())) for n in L.COMPONENT_ORDER}
        total = L.combine_total(comps, L.LossWeights()).item()
        assert abs(total - 4.121) < 1e-9

    def test_gradient_linearity(self):
        # d(total)/d(component inputs) must equal the weighted component grads
        w = L.LossWeights(lam1=2.0, lam2=0.5, lam3=0.25, lam4=4.0)
        leaves = {n: leaf(np.random.default_rng(i).random(3))
                  for i, n in enumerate(L.COMPONENT_ORDER)}

        def comps():
            return {n: tc.mean_all(tc.mul(leaves[n], leaves[n]))
                    for n in L.COMPONENT_ORDER}

        tc.backward(L.combine_total(comps(), w))
        combined = {n: leaves[n].grad.copy() for n in L.COMPONENT_ORDER}
        lam = {"J_z": 1.0, "J_m": w.lam1, "J_r": w.lam2, "J_DQ": w.lam3,
               "J_VQ": w.lam4}
        for n in L.COMPONENT_ORDER:
            tc.zero_grads([leaves[n]])
            tc.backward(comps()[n])
            assert np.allclose(combined[n], lam[n] * leaves[n].grad,
                               rtol=1e-12, atol=1e-12), n
