"""In-memory view of a generated corpus split, ready for training/eval."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import formats
from .spoof_synth import to_net_input


@dataclass
class CorpusSplit:
    img6: np.ndarray       # [N,S,S,6] float32
    depth: np.ndarray      # [N,S/8,S/8,1] face-shape depth (J_DQ target)
    noise_rgb: np.ndarray  # [N,S,S,3] ground-truth noise (zeros for live)
    is_spoof: np.ndarray   # [N] bool
    mediums: list[str]
    subject_ids: np.ndarray
    ids: list[str]         # image paths relative to the corpus root

    @property
    def size(self) -> int:
        return self.img6.shape[1]

    def __len__(self) -> int:
        return self.img6.shape[0]


def load_split(corpus_dir: str, split: str) -> CorpusSplit:
    rows = [r for r in formats.read_manifest(os.path.join(corpus_dir, "manifest.csv"))
            if r["split"] == split]
    if not rows:
        raise formats.DataError(f"no rows for split {split!r} in {corpus_dir}")
    img6, depth, noise, spoof, mediums, subjects, ids = [], [], [], [], [], [], []
    for r in rows:
        rgb = formats.read_ppm(os.path.join(corpus_dir, r["path"]))
        img6.append(to_net_input(rgb).astype(np.float32))
        depth.append(formats.read_plane(os.path.join(corpus_dir, r["depth_path"]),
                                        formats.DEPTH_MAGIC))
        if r["noise_path"]:
            noise.append(formats.read_plane(os.path.join(corpus_dir, r["noise_path"]),
                                            formats.NOISE_MAGIC))
        else:
            noise.append(np.zeros_like(img6[-1][:, :, :3]))
        spoof.append(r["label"] == "spoof")
        mediums.append(r["medium"])
        subjects.append(int(r["subject_id"]))
        ids.append(r["path"])
    return CorpusSplit(
        img6=np.stack(img6),
        depth=np.stack(depth).astype(np.float32),
        noise_rgb=np.stack(noise).astype(np.float32),
        is_spoof=np.array(spoof),
        mediums=mediums,
        subject_ids=np.array(subjects),
        ids=ids,
    )
