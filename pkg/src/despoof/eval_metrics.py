"""Scoring, threshold selection, biometric error rates, medium classification.

Score orientation: every component score and the fused score grow with
spoof-likeness. A sample is accepted as live when its score falls below the
threshold, so APCER counts spoof scores < threshold (per medium, reported as
the worst medium) and BPCER counts live scores >= threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import tensor_core as tc
from .dataset import CorpusSplit
from .despoof_net import ds_forward
from .params import ParamSet
from .quality_nets import dq_forward
from .tensor_core import Tensor

STRATEGIES = ("noise", "depth", "map", "avg", "max", "avg_all", "max_all")


@dataclass
class ScoreRecord:
    sample_id: str
    label: str                # live | spoof
    medium: str
    s_noise: float            # mean |N| over the 6 noise channels
    s_depth: float            # mean |DQ(live_hat) - DQ(input)|
    s_map: float              # mean |0\1 map|
    fused: float = 0.0


@dataclass
class MetricsReport:
    threshold: float
    apcer: float
    bpcer: float
    acer: float
    hter: float
    apcer_per_medium: dict[str, float]
    confusion: dict[str, int]
    strategy: str = "avg"
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold, "APCER": self.apcer, "BPCER": self.bpcer,
            "ACER": self.acer, "HTER": self.hter,
            "APCER_per_medium": self.apcer_per_medium,
            "confusion": self.confusion, "strategy": self.strategy, **self.extra,
        }


def fuse(record: ScoreRecord, strategy: str) -> float:
    """Combine component scores; 'avg' means avg(noise, depth), the default."""
    n, d, m = record.s_noise, record.s_depth, record.s_map
    if strategy == "noise":
        return n
    if strategy == "depth":
        return d
    if strategy == "map":
        return m
    if strategy == "avg":
        return (n + d) / 2.0
    if strategy == "max":
        return max(n, d)
    if strategy == "avg_all":
        return (n + d + m) / 3.0
    if strategy == "max_all":
        return max(n, d, m)
    raise ValueError(f"unknown fusion strategy {strategy!r}; "
                     f"choose from {STRATEGIES}")


def fuse_all(records: list[ScoreRecord], strategy: str) -> list[ScoreRecord]:
    for r in records:
        r.fused = fuse(r, strategy)
    return records


def score_corpus(ds: ParamSet, dq: ParamSet, data: CorpusSplit,
                 decoder_input: str = "features", batch: int = 32,
                 dtype=np.float32) -> tuple[list[ScoreRecord], np.ndarray]:
    """Per-sample scores plus the estimated 6-channel noise stack."""
    records: list[ScoreRecord] = []
    noises = np.empty(data.img6.shape[:3] + (6,), dtype=np.float32)
    n = len(data)
    for start in range(0, n, batch):
        idx = slice(start, min(start + batch, n))
        x = Tensor(data.img6[idx].astype(dtype))
        with tc.no_grad():
            out = ds_forward(ds, x, mode="eval", decoder_input=decoder_input)
            d_in = dq_forward(dq, x, mode="eval")
            d_hat = dq_forward(dq, out.live_hat, mode="eval")
        noises[idx] = out.noise.data
        gain = np.abs(d_hat.data - d_in.data).mean(axis=(1, 2, 3))
        s_noise = np.abs(out.noise.data).mean(axis=(1, 2, 3))
        s_map = np.abs(out.map01.data).mean(axis=(1, 2, 3))
        for j, row in enumerate(range(*idx.indices(n))):
            records.append(ScoreRecord(
                sample_id=data.ids[row],
                label="spoof" if data.is_spoof[row] else "live",
                medium=data.mediums[row],
                s_noise=float(s_noise[j]), s_depth=float(gain[j]),
                s_map=float(s_map[j])))
    return records, noises


# ---------------------------------------------------------------------------
# Error rates
# ---------------------------------------------------------------------------

def _require_both_labels(records: list[ScoreRecord]) -> None:
    labels = {r.label for r in records}
    if labels != {"live", "spoof"}:
        raise ValueError(f"need both live and spoof records, got {sorted(labels)}")


def compute_acer(records: list[ScoreRecord], threshold: float,
                 strategy: str = "avg") -> MetricsReport:
    """APCER (max over mediums), BPCER, and their mean at a fixed threshold."""
    _require_both_labels(records)
    live = [r.fused for r in records if r.label == "live"]
    per_medium: dict[str, list[float]] = {}
    for r in records:
        if r.label == "spoof":
            per_medium.setdefault(r.medium, []).append(r.fused)
    apcer_pm = {m: 100.0 * float(np.mean(np.asarray(v) < threshold))
                for m, v in sorted(per_medium.items())}
    apcer = max(apcer_pm.values())
    bpcer = 100.0 * float(np.mean(np.asarray(live) >= threshold))
    spoof_all = np.asarray([r.fused for r in records if r.label == "spoof"])
    confusion = {
        "live_accepted": int(np.sum(np.asarray(live) < threshold)),
        "live_rejected": int(np.sum(np.asarray(live) >= threshold)),
        "spoof_accepted": int(np.sum(spoof_all < threshold)),
        "spoof_rejected": int(np.sum(spoof_all >= threshold)),
    }
    return MetricsReport(threshold=float(threshold), apcer=apcer, bpcer=bpcer,
                         acer=(apcer + bpcer) / 2.0,
                         hter=compute_hter(records, threshold),
                         apcer_per_medium=apcer_pm, confusion=confusion,
                         strategy=strategy)


def compute_hter(records: list[ScoreRecord], threshold: float) -> float:
    """(FAR + FRR)/2 in percent; FAR aggregates over all spoof samples."""
    _require_both_labels(records)
    live = np.asarray([r.fused for r in records if r.label == "live"])
    spoof = np.asarray([r.fused for r in records if r.label == "spoof"])
    far = float(np.mean(spoof < threshold))
    frr = float(np.mean(live >= threshold))
    return 100.0 * (far + frr) / 2.0


def select_threshold(records: list[ScoreRecord]) -> float:
    """Sweep midpoints of sorted unique scores (plus both outer extremes),
    minimizing ACER; ties break toward lower BPCER, then lower threshold."""
    _require_both_labels(records)
    scores = np.unique([r.fused for r in records])
    candidates = [scores[0] - 1.0, scores[-1] + 1.0]
    candidates += list((scores[:-1] + scores[1:]) / 2.0)
    best = None
    for thr in sorted(candidates):
        rep = compute_acer(records, thr)
        key = (rep.acer, rep.bpcer, thr)
        if best is None or key < best[0]:
            best = (key, thr)
    return float(best[1])


# ---------------------------------------------------------------------------
# Spoof-medium classification from noise spectra
# ---------------------------------------------------------------------------

def noise_hf_feature(noise: np.ndarray, k: int, out_size: int = 16) -> np.ndarray:
    """Channel-averaged shifted FFT magnitude, center-masked, pooled, L2-normed."""
    arr = noise if noise.ndim == 3 else noise[:, :, None]
    s = arr.shape[0]
    spec = tc.fft2_complex(np.ascontiguousarray(arr.transpose(2, 0, 1), dtype=np.float64))
    mag = np.roll(np.abs(spec), (s // 2, s // 2), axis=(1, 2)).mean(axis=0)
    lo, hi = s // 2 - k // 2, s // 2 + k // 2
    mag[lo:hi, lo:hi] = 0.0
    f = s // out_size
    if f < 1:
        raise ValueError(f"noise smaller than feature size: {s} < {out_size}")
    pooled = mag.reshape(out_size, f, out_size, f).mean(axis=(1, 3)).reshape(-1)
    norm = np.linalg.norm(pooled)
    return pooled / norm if norm > 1e-12 else pooled


def medium_classify(train_items: list[tuple[np.ndarray, str]],
                    test_items: list[tuple[np.ndarray, str]], k: int,
                    classes: list[str] | None = None):
    """Nearest-centroid over high-frequency noise features.

    Returns (row-normalized confusion matrix in ``classes`` order, classes,
    accuracy). Distance ties break toward the earlier class in ``classes``.
    """
    if classes is None:
        classes = sorted({m for _, m in train_items})
    if len(classes) < 2:
        raise ValueError("medium_classify needs at least 2 classes")
    feats: dict[str, list[np.ndarray]] = {c: [] for c in classes}
    for noise, medium in train_items:
        feats[medium].append(noise_hf_feature(noise, k))
    for c in classes:
        if not feats[c]:
            raise ValueError(f"empty training class {c!r}")
    centroids = np.stack([np.mean(feats[c], axis=0) for c in classes])
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    correct = 0
    for noise, medium in test_items:
        f = noise_hf_feature(noise, k)
        d = np.linalg.norm(centroids - f, axis=1)
        pred = int(np.argmin(d))  # argmin takes the first (earlier class) on ties
        counts[classes.index(medium), pred] += 1
        correct += classes[pred] == medium
    rows = counts.sum(axis=1, keepdims=True)
    matrix = counts / np.maximum(rows, 1)
    return matrix, classes, correct / max(len(test_items), 1)


# ---------------------------------------------------------------------------
# Feature export with a PCA projection (t-SNE stand-in)
# ---------------------------------------------------------------------------

def pca_2d(feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Top-2 principal projection of row vectors; returns (proj, components)."""
    centered = feats - feats.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    return centered @ comps.T, comps


def export_features(items: list[tuple[str, str, np.ndarray]], k: int,
                    path: str) -> np.ndarray:
    """Write id, medium, the spectral feature vector, and PCA columns."""
    feats = np.stack([noise_hf_feature(noise, k) for _, _, noise in items])
    proj, _ = pca_2d(feats)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "medium"]
                        + [f"f{i}" for i in range(feats.shape[1])]
                        + ["pca0", "pca1"])
        for (sid, medium, _), f, p in zip(items, feats, proj):
            writer.writerow([sid, medium] + [repr(v) for v in f]
                            + [repr(p[0]), repr(p[1])])
    return proj


def write_scores_csv(path: str, records: list[ScoreRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "medium", "s_noise", "s_depth",
                         "s_map", "fused"])
        for r in records:
            writer.writerow([r.sample_id, r.label, r.medium, repr(r.s_noise),
                             repr(r.s_depth), repr(r.s_map), repr(r.fused)])


def write_confusion_csv(path: str, matrix: np.ndarray, classes: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["actual\\predicted"] + classes)
        for cls, row in zip(classes, matrix):
            writer.writerow([cls] + [repr(v) for v in row])
