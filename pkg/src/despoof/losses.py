"""Training objectives: noise magnitude, 0\\1 map, Fourier repetitiveness,
depth-judge supervision, the GAN pair, and their weighted total.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor_core as tc
from .despoof_net import ds_forward
from .params import ParamSet
from .quality_nets import dq_forward, vq_forward
from .tensor_core import Tensor


@dataclass
class LossWeights:
    """Loss weights and the low-frequency mask width of the repetitive term."""

    lam1: float = 3.0      # noise magnitude (live)
    lam2: float = 0.005    # repetitive
    lam3: float = 0.1      # depth judge
    lam4: float = 0.016    # discriminator feedback
    k: int = 16            # central mask width, scale/4 by default


@dataclass
class LossBatch:
    """One training batch with label-derived supervision targets."""

    img6: np.ndarray           # [B,S,S,6]
    is_spoof: np.ndarray       # [B] bool
    map_targets: np.ndarray    # [B,S/8,S/8,1], 0-map live / 1-map spoof
    depth_targets: np.ndarray  # [B,S/8,S/8,1], face-shape depth for everyone

    @property
    def live_idx(self):
        return np.flatnonzero(~self.is_spoof)

    @property
    def spoof_idx(self):
        return np.flatnonzero(self.is_spoof)


def make_batch(split, idx) -> LossBatch:
    """Assemble a LossBatch from corpus rows at ``idx``."""
    idx = np.asarray(idx)
    img6 = split.img6[idx]
    is_spoof = split.is_spoof[idx]
    side = split.depth.shape[1]
    maps = np.where(is_spoof[:, None, None, None],
                    np.ones((1, side, side, 1), dtype=img6.dtype),
                    np.zeros((1, side, side, 1), dtype=img6.dtype))
    return LossBatch(img6=img6, is_spoof=is_spoof, map_targets=maps,
                     depth_targets=split.depth[idx])


def magnitude_loss(noise: Tensor, live_idx) -> Tensor:
    """Mean |noise| over live samples; zero when the batch has none."""
    live_idx = list(live_idx)
    if not live_idx:
        return Tensor(np.zeros((), dtype=noise.data.dtype))
    return tc.l1_norm(tc.take_batch(noise, live_idx))


def zero_one_map_loss(map01: Tensor, targets: np.ndarray) -> Tensor:
    if map01.shape != targets.shape:
        raise tc.ShapeError(
            f"zero_one_map_loss: prediction {map01.shape} vs target {targets.shape}")
    return tc.l1_norm(tc.sub(map01, Tensor(targets.astype(map01.data.dtype))))


def _center_mask(size: int, k: int, dtype) -> np.ndarray:
    mask = np.ones((size, size), dtype=dtype)
    lo, hi = size // 2 - k // 2, size // 2 + k // 2
    mask[lo:hi, lo:hi] = 0.0
    return mask


def repetitive_loss(noise: Tensor, is_spoof: np.ndarray, k: int) -> Tensor:
    """Signed peak of the high-frequency noise spectrum, averaged over the batch.

    Per sample: FFT each channel, shift, zero the central k x k magnitudes,
    take the single maximum over channels and positions. Spoof samples
    contribute its negative (the peak is pushed up), live ones its absolute
    value (pushed down). The max routes its subgradient to the lowest flat
    index among ties.
    """
    b, s, s2, c = noise.shape
    if s != s2:
        raise tc.ShapeError(f"repetitive_loss: spatial dims must match, got {noise.shape}")
    if k <= 0 or k >= s or k % 2:
        raise ValueError(f"repetitive_loss: k must be even and in (0, {s}), got {k}")
    stacked = tc.permute(noise, (0, 3, 1, 2))
    mag = tc.magnitude(tc.fftshift(tc.fft2d(stacked)))
    masked = tc.mul_const(mag, _center_mask(s, k, noise.data.dtype))
    peaks = tc.max_per_sample(tc.reshape(masked, (b, c * s * s)))
    signs = np.where(np.asarray(is_spoof), -1.0, 1.0) / b
    return tc.dot_const(peaks, signs.astype(noise.data.dtype))


def dq_loss(live_hat: Tensor, depth_targets: np.ndarray, dq_ps: ParamSet) -> Tensor:
    """Mean |DQ(live_hat) - face depth|; gradients reach DS only via live_hat."""
    if not dq_ps.frozen:
        raise ValueError("dq_loss: DQ parameters must be frozen")
    pred = dq_forward(dq_ps, live_hat, mode="eval")
    if pred.shape != depth_targets.shape:
        raise tc.ShapeError(
            f"dq_loss: prediction {pred.shape} vs target {depth_targets.shape}")
    return tc.l1_norm(tc.sub(pred, Tensor(depth_targets.astype(pred.data.dtype))))


def vq_discriminator_loss(real6: Tensor, synth6: Tensor, vq_ps: ParamSet,
                          rng: np.random.Generator,
                          dropout_p: float = 0.2) -> Tensor:
    """Eq.-style two-term discriminator objective; DS acts as a constant.

    -E[log p_real(real)] - E[log(1 - p_real(synth))], with probabilities from
    the 2-way softmax, so each term is a stabilized cross-entropy.
    """
    if real6.shape[0] == 0 or synth6.shape[0] == 0:
        raise ValueError("vq_discriminator_loss: empty batch")
    logits_r = vq_forward(vq_ps, real6, mode="train", rng=rng, dropout_p=dropout_p)
    logits_s = vq_forward(vq_ps, synth6, mode="train", rng=rng, dropout_p=dropout_p)
    ce_real = tc.softmax_ce(logits_r, np.zeros(real6.shape[0], dtype=np.int64))
    ce_synth = tc.softmax_ce(logits_s, np.ones(synth6.shape[0], dtype=np.int64))
    return tc.add(ce_real, ce_synth)


def vq_generator_loss(synth_live_hat: Tensor, vq_ps: ParamSet) -> Tensor:
    """-E[log p_real(synth)] with VQ fixed; gradients flow through the input.

    VQ runs through a constant view: its parameters stay off the tape, so
    their gradients are absent rather than zero.
    """
    if synth_live_hat.shape[0] == 0:
        raise ValueError("vq_generator_loss: empty batch")
    logits = vq_forward(vq_ps.constant_view(), synth_live_hat, mode="eval")
    return tc.softmax_ce(logits, np.zeros(synth_live_hat.shape[0], dtype=np.int64))


COMPONENT_ORDER = ("J_z", "J_m", "J_r", "J_DQ", "J_VQ")


def combine_total(components: dict[str, Tensor], weights: LossWeights) -> Tensor:
    """J_z + lam1*J_m + lam2*J_r + lam3*J_DQ + lam4*J_VQ."""
    total = components["J_z"]
    for name, lam in (("J_m", weights.lam1), ("J_r", weights.lam2),
                      ("J_DQ", weights.lam3), ("J_VQ", weights.lam4)):
        total = tc.add(total, tc.scale(components[name], lam))
    return total


def total_loss(batch: LossBatch, ds_ps: ParamSet, dq_ps: ParamSet,
               vq_ps: ParamSet, weights: LossWeights, mode: str = "train",
               decoder_input: str = "features"):
    """Full DS objective on one batch.

    Returns (total Tensor, components dict of Tensors, DS forward output).
    VQ runs fixed (eval mode); DQ must already be frozen.
    """
    x = Tensor(batch.img6)
    out = ds_forward(ds_ps, x, mode, decoder_input)
    spoof_idx = batch.spoof_idx
    if len(spoof_idx) == 0:
        raise ValueError("total_loss: batch has no spoof samples")
    components = {
        "J_z": zero_one_map_loss(out.map01, batch.map_targets),
        "J_m": magnitude_loss(out.noise, batch.live_idx),
        "J_r": repetitive_loss(out.noise, batch.is_spoof, weights.k),
        "J_DQ": dq_loss(out.live_hat, batch.depth_targets, dq_ps),
        "J_VQ": vq_generator_loss(tc.take_batch(out.live_hat, spoof_idx), vq_ps),
    }
    return combine_total(components, weights), components, out
