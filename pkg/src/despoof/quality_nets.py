"""DQ Net (frozen depth judge) and VQ Net (visual-realism discriminator).

DQ mirrors the DS encoder pattern: a stem conv, three conv blocks with
pooling, a pool short-cut concatenation, and a three-conv head ending in a
1-channel depth map at 1/8 resolution. Paper-scale channel widths
(64/128/196/...) shrink by a configurable factor (0.25 at desk scale): the
judge is infrastructure, not the contribution. VQ is six stride-1 convs with
three pools, then fc -> dropout -> fc producing 2 logits (real vs synthetic).
"""

from __future__ import annotations

import numpy as np

from . import tensor_core as tc
from .params import ParamSet, add_conv, add_fc, rng_from
from .tensor_core import Tensor

DQ_PAPER = {"stem": 64, "a": 128, "b": 196, "head": 64}
VQ_CONVS = [("conv4-1", 24), ("conv4-2", 20), ("conv4-3", 20),
            ("conv4-4", 16), ("conv4-5", 12), ("conv4-6", 6)]
VQ_FC_HIDDEN = 100
VQ_DROPOUT = 0.2


def _scaled(c: int, factor: float) -> int:
    return max(1, int(round(c * factor)))


def dq_layer_plan(factor: float = 0.25):
    stem = _scaled(DQ_PAPER["stem"], factor)
    a = _scaled(DQ_PAPER["a"], factor)
    b = _scaled(DQ_PAPER["b"], factor)
    head = _scaled(DQ_PAPER["head"], factor)
    plan = [("conv3-0", 6, stem, True)]
    cin = stem
    idx = 1
    for _ in range(3):
        for cout in (a, b, a):
            plan.append((f"conv3-{idx}", cin, cout, True))
            cin = cout
            idx += 1
    plan.append(("conv3-10", 3 * a, a, True))
    plan.append(("conv3-11", a, head, True))
    plan.append(("conv3-12", head, 1, False))
    return plan


def build_dq_params(rng: np.random.Generator, dtype=np.float32,
                    factor: float = 0.25) -> ParamSet:
    ps = ParamSet("dq")
    for name, cin, cout, bn in dq_layer_plan(factor):
        add_conv(ps, name, cin, cout, rng, dtype, bn=bn)
    return ps


def _conv_bn_elu(ps: ParamSet, name: str, x: Tensor, mode: str) -> Tensor:
    y = tc.conv2d(x, ps[f"{name}/w"], ps[f"{name}/b"])
    y = tc.batch_norm(y, ps[f"{name}/gamma"], ps[f"{name}/beta"],
                      ps.bn_state(name), mode)
    return tc.elu(y)


def dq_forward(ps: ParamSet, x: Tensor, mode: str = "eval") -> Tensor:
    """Depth estimate [B,S/8,S/8,1] for a 6-channel image batch."""
    if x.data.ndim != 4 or x.shape[3] != 6:
        raise tc.ShapeError(f"dq_forward: input must be [B,S,S,6], got {x.shape}")
    h = _conv_bn_elu(ps, "conv3-0", x, mode)
    pools = []
    idx = 1
    for _ in range(3):
        for _ in range(3):
            h = _conv_bn_elu(ps, f"conv3-{idx}", h, mode)
            idx += 1
        h = tc.max_pool2(h)
        pools.append(h)
    p1 = tc.avg_pool(pools[0], 4)
    p2 = tc.avg_pool(pools[1], 2)
    h = tc.concat_channels([p1, p2, pools[2]])
    h = _conv_bn_elu(ps, "conv3-10", h, mode)
    h = _conv_bn_elu(ps, "conv3-11", h, mode)
    return tc.conv2d(h, ps["conv3-12/w"], ps["conv3-12/b"])


def build_vq_params(rng: np.random.Generator, scale: int,
                    dtype=np.float32) -> ParamSet:
    ps = ParamSet("vq")
    cin = 6
    for name, cout in VQ_CONVS:
        add_conv(ps, name, cin, cout, rng, dtype, bn=True)
        cin = cout
    feat = (scale // 8) ** 2 * VQ_CONVS[-1][1]
    add_fc(ps, "fc4-1", feat, VQ_FC_HIDDEN, rng, dtype)
    add_fc(ps, "fc4-2", VQ_FC_HIDDEN, 2, rng, dtype)
    return ps


def vq_forward(ps: ParamSet, x: Tensor, mode: str = "eval",
               rng: np.random.Generator | None = None,
               dropout_p: float = VQ_DROPOUT) -> Tensor:
    """Class logits [B,2]: index 0 = real, index 1 = synthetic.

    Dropout fires only in train mode and then needs ``rng``.
    """
    if x.data.ndim != 4 or x.shape[3] != 6:
        raise tc.ShapeError(f"vq_forward: input must be [B,S,S,6], got {x.shape}")
    h = x
    for i, (name, _) in enumerate(VQ_CONVS):
        h = _conv_bn_elu(ps, name, h, mode)
        if i % 2 == 1:
            h = tc.max_pool2(h)
    b = h.shape[0]
    h = tc.reshape(h, (b, int(np.prod(h.shape[1:]))))
    h = tc.elu(tc.fully_connected(h, ps["fc4-1/w"], ps["fc4-1/b"]))
    h = tc.dropout(h, dropout_p, mode, rng)
    return tc.fully_connected(h, ps["fc4-2/w"], ps["fc4-2/b"])


def pretrain_dq(data, cfg, log=None) -> tuple[ParamSet, list[float]]:
    """Train DQ on label-derived depth targets, then freeze it.

    Targets are exactly: live -> stored face-shape depth, spoof -> zero map
    (asserted per batch). Returns the frozen ParamSet and per-epoch mean loss.
    """
    from .optim import OptState, optimizer_step  # local import avoids a cycle

    dtype = np.float32 if cfg.precision == "float32" else np.float64
    ps = build_dq_params(rng_from(cfg.seed, 1), dtype, cfg.dq_channel_factor)
    opt = OptState(cfg.optimizer)
    curve: list[float] = []
    n = data.img6.shape[0]
    for epoch in range(cfg.dq_pretrain_epochs):
        order = rng_from(cfg.seed, 10_000 + epoch).permutation(n)
        losses = []
        for start in range(0, n - cfg.batch_size + 1, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            target = np.where(data.is_spoof[idx, None, None, None],
                              np.zeros_like(data.depth[idx]), data.depth[idx])
            # depth-label contract: spoof rows train toward the zero map
            assert np.all(target[data.is_spoof[idx]] == 0.0)
            x = Tensor(data.img6[idx].astype(dtype))
            pred = dq_forward(ps, x, mode="train")
            loss = tc.l1_norm(tc.sub(pred, Tensor(target.astype(dtype))))
            tc.zero_grads(ps.trainable())
            tc.backward(loss)
            optimizer_step(ps, opt, cfg.dq_pretrain_lr)
            losses.append(loss.item())
        curve.append(float(np.mean(losses)))
        if log is not None:
            log(epoch, curve[-1])
    ps.freeze()
    return ps, curve
