"""DS Net: encoder-decoder that splits a 6-channel face image into estimated
spoof noise, a 0\\1 ubiquity map at 1/8 resolution, and the reconstructed
live image (input minus noise).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .params import ParamSet, add_conv
from .tensor_core import Tensor

# (layer, out_channels); input channels follow from the previous layer
ENCODER = [
    ("conv1-0", 24), ("conv1-1", 20), ("conv1-2", 25), ("conv1-3", 20),
    ("conv1-4", 20), ("conv1-5", 25), ("conv1-6", 20),
    ("conv1-7", 20), ("conv1-8", 25), ("conv1-9", 20),
]
HEAD = [("conv1-10", 28), ("conv1-11", 16)]
MAP_LAYER = ("conv1-12", 1)
DECODER = [
    ("conv2-1", 28), ("conv2-2", 24), ("conv2-3", 20), ("conv2-4", 20),
    ("conv2-5", 20), ("conv2-6", 16), ("conv2-7", 16),
]
NOISE_LAYER = ("conv2-8", 6)

IN_CHANNELS = 6
SHORTCUT_CHANNELS = 3 * 20  # pool1-1 + pool1-2 + pool1-3, harmonized to S/8


@dataclass
class DsOutput:
    noise: Tensor      # [B,S,S,6]
    map01: Tensor      # [B,S/8,S/8,1]
    live_hat: Tensor   # [B,S,S,6], input - noise
    features: Tensor   # [B,S/8,S/8,16], representation feeding head and decoder


def _layer_plan(decoder_input: str = "features"):
    """Yield (layer, cin, cout, has_bn) over the whole DS net."""
    if decoder_input not in ("features", "shortcut"):
        raise ValueError(f"decoder_input must be features|shortcut, got {decoder_input!r}")
    cin = IN_CHANNELS
    for name, cout in ENCODER:
        yield name, cin, cout, True
        cin = cout
    cin = SHORTCUT_CHANNELS
    for name, cout in HEAD:
        yield name, cin, cout, True
        cin = cout
    yield MAP_LAYER[0], cin, MAP_LAYER[1], False
    cin = HEAD[-1][1] if decoder_input == "features" else SHORTCUT_CHANNELS
    for name, cout in DECODER:
        yield name, cin, cout, True
        cin = cout
    yield NOISE_LAYER[0], cin, NOISE_LAYER[1], False


def build_ds_params(rng: np.random.Generator, dtype=np.float32,
                    decoder_input: str = "features") -> ParamSet:
    ps = ParamSet("ds")
    for name, cin, cout, bn in _layer_plan(decoder_input):
        add_conv(ps, name, cin, cout, rng, dtype, bn=bn)
    return ps


def ds_param_count(decoder_input: str = "features", include_bn: bool = True) -> int:
    """Total serialized float count (conv kernels, biases, BN vectors)."""
    total = 0
    for _, cin, cout, bn in _layer_plan(decoder_input):
        total += 9 * cin * cout + cout
        if bn and include_bn:
            total += 4 * cout
    return total


def conv_param_count(cin: int, cout: int) -> int:
    """Floats contributed by one 3x3 conv kernel plus its bias."""
    return 9 * cin * cout + cout


def _conv_bn_elu(ps: ParamSet, name: str, x: Tensor, mode: str) -> Tensor:
    y = tc.conv2d(x, ps[f"{name}/w"], ps[f"{name}/b"])
    y = tc.batch_norm(y, ps[f"{name}/gamma"], ps[f"{name}/beta"],
                      ps.bn_state(name), mode)
    return tc.elu(y)


def encoder_shortcut(ps: ParamSet, x: Tensor, mode: str) -> Tensor:
    """Run the encoder blocks and return the harmonized pool concatenation."""
    h = x
    pools = []
    for i, (name, _) in enumerate(ENCODER):
        h = _conv_bn_elu(ps, name, h, mode)
        if i in (3, 6, 9):
            h = tc.max_pool2(h)
            pools.append(h)
    # pool maps live at S/2, S/4, S/8; average-pool the first two down to S/8
    p1 = tc.avg_pool(pools[0], 4)
    p2 = tc.avg_pool(pools[1], 2)
    return tc.concat_channels([p1, p2, pools[2]])


def ds_forward(ps: ParamSet, x: Tensor, mode: str,
               decoder_input: str = "features") -> DsOutput:
    """Full DS pass. ``mode`` controls batch-norm statistics (train|eval)."""
    if x.data.ndim != 4 or x.shape[3] != IN_CHANNELS:
        raise tc.ShapeError(
            f"ds_forward: input must be [B,S,S,{IN_CHANNELS}], got {x.shape}")
    s = x.shape[1]
    if x.shape[2] != s or s % 8:
        raise tc.ShapeError(f"ds_forward: spatial size {x.shape[1:3]} must be "
                            "square and divisible by 8")
    shortcut = encoder_shortcut(ps, x, mode)
    h = shortcut
    for name, _ in HEAD:
        h = _conv_bn_elu(ps, name, h, mode)
    features = h
    map01 = tc.conv2d(features, ps["conv1-12/w"], ps["conv1-12/b"])

    dec = features if decoder_input == "features" else shortcut
    h = tc.resize_bilinear(dec, (s, s))
    for name, _ in DECODER:
        h = _conv_bn_elu(ps, name, h, mode)
    noise = tc.conv2d(h, ps["conv2-8/w"], ps["conv2-8/b"])
    live_hat = tc.sub(x, noise)
    return DsOutput(noise=noise, map01=map01, live_hat=live_hat, features=features)
