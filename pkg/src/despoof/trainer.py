"""Training orchestration: DQ pretraining, then the two-batch alternation
(phase A updates the discriminator with DS fixed, phase B updates DS with the
full weighted objective and both judges fixed), with deterministic seeded
batch composition, CSV loss logging, and bitwise-resumable checkpoints.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor_core as tc
from .dataset import CorpusSplit
from .despoof_net import build_ds_params, ds_param_count
from .losses import (LossBatch, LossWeights, make_batch, total_loss,
                     vq_discriminator_loss)
from .optim import OptState, optimizer_step
from .params import ParamSet, load_container, rng_from, save_container
from .quality_nets import build_dq_params, build_vq_params, pretrain_dq
from .tensor_core import Tensor

LOSS_FIELDS = ["step", "J_z", "J_m", "J_r", "J_DQ", "J_VQ", "J_T"]


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 6
    learning_rate: float = 3e-5
    steps: int = 2000
    seed: int = 1
    scale: int = 64
    weights: LossWeights = field(default_factory=LossWeights)
    optimizer: str = "adam"
    checkpoint_interval: int = 500
    dq_pretrain_epochs: int = 10
    dq_pretrain_lr: float = 1e-3
    dq_channel_factor: float = 0.25
    precision: str = "float32"
    decoder_input: str = "features"
    vq_dropout: float = 0.2

    def __post_init__(self):
        if self.batch_size < 2:
            raise TrainError("batch_size must be >= 2 (batch norm)")
        if self.precision not in ("float32", "float64"):
            raise TrainError(f"unknown precision {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def hash(self) -> str:
        """Semantic config hash; run-length knobs stay out so a resumed run
        may extend ``steps`` without tripping the compatibility check."""
        payload = dataclasses.asdict(self)
        payload.pop("steps")
        payload.pop("checkpoint_interval")
        text = "\n".join(f"{k}={payload[k]}" for k in sorted(payload))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class Nets:
    ds: ParamSet
    dq: ParamSet
    vq: ParamSet


def sample_balanced(data: CorpusSplit, rng: np.random.Generator,
                    batch_size: int) -> np.ndarray:
    """Half live, half spoof (spoof gets the odd slot), without replacement."""
    live = np.flatnonzero(~data.is_spoof)
    spoof = np.flatnonzero(data.is_spoof)
    n_live = batch_size // 2
    n_spoof = batch_size - n_live
    if len(live) < n_live or len(spoof) < n_spoof:
        raise TrainError(
            f"corpus too small for a balanced batch of {batch_size} "
            f"({len(live)} live / {len(spoof)} spoof available)")
    idx = np.concatenate([rng.choice(live, n_live, replace=False),
                          rng.choice(spoof, n_spoof, replace=False)])
    return idx


def train_step(data: CorpusSplit, nets: Nets, opt_ds: OptState, opt_vq: OptState,
               cfg: TrainConfig, step: int) -> dict:
    """One alternation iteration over two independent balanced batches."""
    if not nets.dq.frozen:
        raise TrainError("train_step: DQ must be pretrained and frozen")

    # phase A: DS fixed, update VQ on real lives vs reconstructed spoofs
    rng_a = rng_from(cfg.seed, 2, step, 0)
    idx_a = sample_balanced(data, rng_a, cfg.batch_size)
    lives = idx_a[~data.is_spoof[idx_a]]
    spoofs = idx_a[data.is_spoof[idx_a]]
    with tc.no_grad():
        synth = ds_forward_data(nets.ds, data.img6[spoofs], cfg)
    loss_a = vq_discriminator_loss(
        Tensor(data.img6[lives].astype(cfg.dtype)), Tensor(synth),
        nets.vq, rng_from(cfg.seed, 2, step, 1), cfg.vq_dropout)
    tc.zero_grads(nets.vq.trainable())
    tc.backward(loss_a)
    optimizer_step(nets.vq, opt_vq, cfg.learning_rate)
    tc.zero_grads(nets.vq.trainable())

    # phase B: VQ fixed, update DS on the full weighted objective
    rng_b = rng_from(cfg.seed, 3, step, 0)
    idx_b = sample_balanced(data, rng_b, cfg.batch_size)
    batch = make_batch(data, idx_b)
    total, components, _ = total_loss(batch, nets.ds, nets.dq, nets.vq,
                                      cfg.weights, mode="train",
                                      decoder_input=cfg.decoder_input)
    tc.zero_grads(nets.ds.trainable())
    tc.backward(total)
    optimizer_step(nets.ds, opt_ds, cfg.learning_rate)
    tc.zero_grads(nets.ds.trainable())

    row = {"step": str(step)}
    for name, t in components.items():
        row[name] = repr(t.item())
    row["J_T"] = repr(total.item())
    if not np.isfinite(total.item()):
        raise TrainError(f"non-finite total loss at step {step}")
    return row


def ds_forward_data(ds: ParamSet, img6: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """Reconstructed live images as plain data (inference, no tape)."""
    from .despoof_net import ds_forward
    with tc.no_grad():
        out = ds_forward(ds, Tensor(img6.astype(cfg.dtype)), mode="eval",
                         decoder_input=cfg.decoder_input)
    return out.live_hat.data


def build_nets(cfg: TrainConfig, data: CorpusSplit, log=None) -> tuple[Nets, list]:
    dq, curve = pretrain_dq(data, cfg, log=log)
    ds = build_ds_params(rng_from(cfg.seed, 0), cfg.dtype, cfg.decoder_input)
    vq = build_vq_params(rng_from(cfg.seed, 4), cfg.scale, cfg.dtype)
    return Nets(ds=ds, dq=dq, vq=vq), curve


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: str, nets: Nets, opt_ds: OptState, opt_vq: OptState,
                    cfg: TrainConfig, step: int) -> None:
    arrays: dict[str, np.ndarray] = {}
    arrays.update(nets.ds.as_arrays("ds/"))
    arrays.update(nets.dq.as_arrays("dq/"))
    arrays.update(nets.vq.as_arrays("vq/"))
    arrays.update(opt_ds.as_arrays("opt/ds/"))
    arrays.update(opt_vq.as_arrays("opt/vq/"))
    save_container(path, arrays)
    meta = {
        "step": step,
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "scale": cfg.scale,
        "k": cfg.weights.k,
        "decoder_input": cfg.decoder_input,
        "dq_channel_factor": cfg.dq_channel_factor,
        "precision": cfg.precision,
        "optimizer": cfg.optimizer,
        "opt_t_ds": opt_ds.t,
        "opt_t_vq": opt_vq.t,
        "rng_state": {"scheme": "per-step seed derivation", "seed": cfg.seed,
                      "next_step": step + 1},
        "ds_param_count": ds_param_count(cfg.decoder_input),
    }
    tmp = path + ".json.tmp"
    with open(tmp, "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    os.replace(tmp, path + ".json")


def load_checkpoint(path: str, cfg: TrainConfig) -> tuple[Nets, OptState, OptState, dict]:
    with open(path + ".json") as fh:
        meta = json.load(fh)
    arrays = load_container(path)
    ds = build_ds_params(rng_from(cfg.seed, 0), cfg.dtype, cfg.decoder_input)
    dq = build_dq_params(rng_from(cfg.seed, 1), cfg.dtype, cfg.dq_channel_factor)
    vq = build_vq_params(rng_from(cfg.seed, 4), cfg.scale, cfg.dtype)
    ds.load_arrays(arrays, "ds/")
    dq.load_arrays(arrays, "dq/")
    vq.load_arrays(arrays, "vq/")
    dq.freeze()
    opt_ds = OptState(cfg.optimizer)
    opt_vq = OptState(cfg.optimizer)
    opt_ds.load_arrays(arrays, "opt/ds/", meta["opt_t_ds"])
    opt_vq.load_arrays(arrays, "opt/vq/", meta["opt_t_vq"])
    return Nets(ds=ds, dq=dq, vq=vq), opt_ds, opt_vq, meta


def train(data: CorpusSplit, cfg: TrainConfig, out_dir: str,
          resume: str | None = None, progress=None) -> tuple[str, list[dict]]:
    """Run the full schedule; returns (final checkpoint path, loss rows).

    ``resume`` continues from a checkpoint bitwise-identically to an
    uninterrupted run (per-step RNG derivation carries all randomness).
    """
    if data.size != cfg.scale:
        raise TrainError(f"corpus size {data.size} != configured scale {cfg.scale}")
    os.makedirs(out_dir, exist_ok=True)
    rows: list[dict] = []
    csv_path = os.path.join(out_dir, "loss_log.csv")

    if resume is None:
        pre_rows: list[dict] = []

        def log_epoch(epoch, value):
            pre_rows.append({"step": f"pre{epoch + 1}", "J_z": "0", "J_m": "0",
                             "J_r": "0", "J_DQ": repr(value), "J_VQ": "0",
                             "J_T": repr(value)})
        nets, _ = build_nets(cfg, data, log=log_epoch)
        rows.extend(pre_rows)
        opt_ds = OptState(cfg.optimizer)
        opt_vq = OptState(cfg.optimizer)
        start = 0
    else:
        nets, opt_ds, opt_vq, meta = load_checkpoint(resume, cfg)
        if meta["config_hash"] != cfg.hash():
            raise TrainError("resume: config hash mismatch")
        start = meta["step"]

    final_path = os.path.join(out_dir, f"ckpt_step{cfg.steps:06d}.dspf")
    for step in range(start + 1, cfg.steps + 1):
        rows.append(train_step(data, nets, opt_ds, opt_vq, cfg, step))
        if progress is not None:
            progress(step, rows[-1])
        if step % cfg.checkpoint_interval == 0 or step == cfg.steps:
            path = os.path.join(out_dir, f"ckpt_step{step:06d}.dspf")
            save_checkpoint(path, nets, opt_ds, opt_vq, cfg, step)
    if start >= cfg.steps:  # nothing left to do; still emit the checkpoint
        save_checkpoint(final_path, nets, opt_ds, opt_vq, cfg, cfg.steps)

    with open(csv_path, "w") as fh:
        fh.write(",".join(LOSS_FIELDS) + "\n")
        for row in rows:
            fh.write(",".join(row[f] for f in LOSS_FIELDS) + "\n")
    return final_path, rows
