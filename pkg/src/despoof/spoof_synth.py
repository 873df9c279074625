"""Synthetic spoof corpus: procedural live faces plus a four-step degradation
pipeline (color gamut distortion, display resampling/blur, presentation
reflections, imaging lattice) that records the exact additive noise each
spoof carries.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import formats
from .params import rng_from
from .tensor_core import _apply_interp, _interp_matrix, is_pow2

DEFAULT_MEDIUMS = ("print1", "print2", "display1", "display2")


class SynthError(ValueError):
    """Invalid generation parameters."""


# ---------------------------------------------------------------------------
# Samples and medium profiles
# ---------------------------------------------------------------------------

@dataclass
class LiveSample:
    rgb: np.ndarray          # [S,S,3] in [0,1]
    depth: np.ndarray        # [S/8,S/8] in [0,1], 0 off the face, max 1 at apex
    subject_id: int


@dataclass
class SpoofSample:
    rgb: np.ndarray          # degraded [S,S,3] in [0,1]
    source: LiveSample
    medium: str
    gt_noise: np.ndarray     # rgb - source.rgb, exact post-clamp residual
    depth_label: np.ndarray  # all-zero map at S/8


@dataclass
class MediumProfile:
    """Degradation parameters for one spoof medium."""

    name: str
    gamut_matrix: np.ndarray      # 3x3, spectral norm < 1
    gamut_offset: np.ndarray      # 3-vector
    scale_factor: int             # display down/up resampling factor
    blur_sigma: float
    reflect_amplitude: float
    reflect_orientation_deg: float
    lattice_fx: int               # cycles per image
    lattice_fy: int
    lattice_amplitude: float

    def validate(self) -> None:
        a, off = self.gamut_matrix, self.gamut_offset
        if a.shape != (3, 3) or off.shape != (3,):
            raise SynthError(f"{self.name}: gamut matrix/offset shapes invalid")
        if np.linalg.norm(a, 2) >= 1.0:
            raise SynthError(f"{self.name}: gamut matrix is not a contraction")
        corners = np.array([[r, g, b] for r in (0, 1) for g in (0, 1) for b in (0, 1)],
                           dtype=np.float64)
        mapped = corners @ a.T + off
        if mapped.min() < 0.0 or mapped.max() > 1.0:
            raise SynthError(f"{self.name}: gamut map leaves the unit cube")
        if self.scale_factor < 1:
            raise SynthError(f"{self.name}: scale factor must be >= 1")

    def check_lattice_band(self, size: int) -> None:
        if self.lattice_amplitude > 0 and min(self.lattice_fx, self.lattice_fy) <= size // 8:
            raise SynthError(
                f"{self.name}: lattice frequency below the high-frequency band "
                f"(need > {size // 8} cycles at size {size})")

    @classmethod
    def identity(cls) -> "MediumProfile":
        return cls(name="identity", gamut_matrix=np.eye(3),
                   gamut_offset=np.zeros(3), scale_factor=1, blur_sigma=0.0,
                   reflect_amplitude=0.0, reflect_orientation_deg=0.0,
                   lattice_fx=16, lattice_fy=16, lattice_amplitude=0.0)


def load_medium_profiles(path: str | None = None) -> dict[str, MediumProfile]:
    """Parse the versioned key=value profile file (package default when no path)."""
    if path is None:
        text = resources.files("despoof").joinpath("data/mediums_v1.cfg").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    raw: dict[str, dict[str, str]] = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        if "." not in key:
            continue  # file-level keys (version tag)
        name, attr = key.split(".", 1)
        raw.setdefault(name, {})[attr.strip()] = value.strip()
    profiles = {}
    for name, kv in raw.items():
        p = MediumProfile(
            name=name,
            gamut_matrix=np.array([float(v) for v in kv["gamut_matrix"].split()],
                                  dtype=np.float64).reshape(3, 3),
            gamut_offset=np.array([float(v) for v in kv["gamut_offset"].split()],
                                  dtype=np.float64),
            scale_factor=int(kv["scale_factor"]),
            blur_sigma=float(kv["blur_sigma"]),
            reflect_amplitude=float(kv["reflect_amplitude"]),
            reflect_orientation_deg=float(kv["reflect_orientation_deg"]),
            lattice_fx=int(kv["lattice_fx"]),
            lattice_fy=int(kv["lattice_fy"]),
            lattice_amplitude=float(kv["lattice_amplitude"]),
        )
        p.validate()
        profiles[name] = p
    return profiles


# ---------------------------------------------------------------------------
# Filtering helpers
# ---------------------------------------------------------------------------

def _sep_filter(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable filtering with reflect padding (preserves constants)."""
    r = (len(kernel) - 1) // 2
    out = img
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="reflect")
        acc = np.zeros_like(out)
        for t, kv in enumerate(kernel):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(t, t + out.shape[axis])
            acc += kv * padded[tuple(sl)]
        out = acc
    return out


def _gauss_kernel(radius: int, sigma: float) -> np.ndarray:
    k = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return img
    return _sep_filter(img, _gauss_kernel(max(1, int(round(3 * sigma))), sigma))


def blur_by_kernel_size(img: np.ndarray, ksize: int) -> np.ndarray:
    """Gaussian approximation at odd kernel sizes {1,3,5,7,9}; 1 is identity."""
    if ksize not in (1, 3, 5, 7, 9):
        raise SynthError(f"blur kernel size must be one of 1,3,5,7,9, got {ksize}")
    if ksize == 1:
        return img
    return _sep_filter(img, _gauss_kernel((ksize - 1) // 2, ksize / 3.0))


def _resample(img: np.ndarray, factor: int) -> np.ndarray:
    """Area-average downsample by ``factor`` then bilinear upsample back."""
    h, w, c = img.shape
    if h % factor or w % factor:
        raise SynthError(f"image size {(h, w)} not divisible by scale factor {factor}")
    small = img.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))
    ry = _interp_matrix(h // factor, h, "float64")
    rx = _interp_matrix(w // factor, w, "float64")
    return _apply_interp(small[None], ry, rx)[0]


# ---------------------------------------------------------------------------
# Live face generation
# ---------------------------------------------------------------------------

def gen_live_face(seed: int, size: int) -> LiveSample:
    """Deterministic procedural face over a textured background.

    The pseudo-depth is the normalized ellipsoid height of the head over the
    face region at size/8 resolution, zero on the background.
    """
    if not is_pow2(size) or size < 32:
        raise SynthError(f"face size must be a power of two >= 32, got {size}")
    rng = rng_from(int(seed))
    s = size
    ys, xs = np.meshgrid(np.arange(s) / s, np.arange(s) / s, indexing="ij")

    # background: base color plus two low-frequency cosine washes
    base = rng.uniform(0.25, 0.55, size=3)
    img = np.tile(base, (s, s, 1))
    for _ in range(2):
        fy, fx = rng.uniform(0.5, 2.5, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        wash = 0.05 * np.cos(2 * np.pi * (fy * ys + fx * xs) + phase)
        img += wash[:, :, None] * rng.uniform(0.3, 1.0, size=3)

    # head ellipse and its height field
    cx = 0.5 + rng.uniform(-0.05, 0.05)
    cy = 0.5 + rng.uniform(-0.04, 0.04)
    ax = rng.uniform(0.24, 0.30)
    ay = rng.uniform(0.32, 0.38)
    q = ((xs - cx) / ax) ** 2 + ((ys - cy) / ay) ** 2
    height = np.sqrt(np.maximum(0.0, 1.0 - q))
    mask = np.clip((1.0 - q) * 8.0, 0.0, 1.0)  # soft rim, 1 inside

    skin = np.array([rng.uniform(0.62, 0.82),
                     rng.uniform(0.48, 0.66),
                     rng.uniform(0.38, 0.56)])
    light = rng.uniform(-1.0, 1.0)
    shade = 0.55 + 0.45 * height + 0.12 * light * (xs - cx) / ax
    face = skin[None, None, :] * shade[:, :, None]

    # eyes and mouth as dark gaussian blobs
    for ex in (-0.38, 0.38):
        d2 = ((xs - (cx + ex * ax)) ** 2 + (ys - (cy - 0.18 * ay)) ** 2)
        face -= 0.35 * np.exp(-d2 / (2 * (0.035 ** 2)))[:, :, None]
    d2m = (((xs - cx) / 1.8) ** 2 + (ys - (cy + 0.45 * ay)) ** 2)
    face -= 0.15 * np.exp(-d2m / (2 * (0.03 ** 2)))[:, :, None]

    img = img * (1 - mask[:, :, None]) + face * mask[:, :, None]
    texture = rng.normal(0.0, 1.0, size=(s, s, 3))
    img += 0.015 * gaussian_blur(texture, 1.0)
    img = np.clip(img, 0.0, 1.0)

    # depth at size/8 from the same ellipse, normalized to max 1
    sd = s // 8
    ysd, xsd = np.meshgrid((np.arange(sd) + 0.5) / sd, (np.arange(sd) + 0.5) / sd,
                           indexing="ij")
    qd = ((xsd - cx) / ax) ** 2 + ((ysd - cy) / ay) ** 2
    depth = np.sqrt(np.maximum(0.0, 1.0 - qd))
    if depth.max() > 0:
        depth = depth / depth.max()
    return LiveSample(rgb=img, depth=depth, subject_id=int(seed))


# ---------------------------------------------------------------------------
# Degradation steps
# ---------------------------------------------------------------------------

def apply_color_distortion(img: np.ndarray, profile: MediumProfile) -> np.ndarray:
    """Step 1: project into the medium's narrower gamut (affine map, clamp)."""
    out = img @ profile.gamut_matrix.T + profile.gamut_offset
    return np.clip(out, 0.0, 1.0)


def apply_display_artifacts(img: np.ndarray, profile: MediumProfile) -> np.ndarray:
    """Step 2: pixel-approximation resampling then Gaussian blur."""
    if profile.scale_factor < 1:
        raise SynthError(f"{profile.name}: scale factor must be >= 1")
    out = img
    if profile.scale_factor > 1:
        out = _resample(out, profile.scale_factor)
    return gaussian_blur(out, profile.blur_sigma)


def apply_presenting_artifacts(img: np.ndarray, profile: MediumProfile,
                               seed: int) -> np.ndarray:
    """Step 3: smooth additive reflection field (oriented ramp + one highlight)."""
    amp = profile.reflect_amplitude
    if amp == 0.0:
        return img
    rng = rng_from(int(seed), 3)
    s = img.shape[0]
    ys, xs = np.meshgrid(np.arange(s) / s, np.arange(s) / s, indexing="ij")
    theta = np.deg2rad(profile.reflect_orientation_deg)
    ramp = (xs - 0.5) * np.cos(theta) + (ys - 0.5) * np.sin(theta)
    cx, cy = rng.uniform(0.25, 0.75, size=2)
    sig = rng.uniform(0.18, 0.28)  # keeps the field gradient under 4*amp/size
    highlight = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sig ** 2))
    fld = amp * (0.8 * ramp + 0.9 * highlight)
    return np.clip(img + fld[:, :, None], 0.0, 1.0)


def apply_imaging_artifacts(img: np.ndarray, profile: MediumProfile,
                            seed: int) -> np.ndarray:
    """Step 4: high-frequency sensor/medium interference lattice (moire source)."""
    amp = profile.lattice_amplitude
    if amp == 0.0:
        return img
    profile.check_lattice_band(img.shape[0])
    rng = rng_from(int(seed), 4)
    s = img.shape[0]
    ys, xs = np.meshgrid(np.arange(s) / s, np.arange(s) / s, indexing="ij")
    phx, phy, phe = rng.uniform(0, 2 * np.pi, size=3)
    lattice = (np.cos(2 * np.pi * profile.lattice_fx * xs + phx)
               * np.cos(2 * np.pi * profile.lattice_fy * ys + phy))
    envelope = 1.0 + 0.3 * np.cos(2 * np.pi * (xs + ys) * 2.0 + phe)
    fld = amp * lattice * envelope
    chroma = np.array([1.0, 0.95, 1.05])
    return np.clip(img + fld[:, :, None] * chroma, 0.0, 1.0)


def make_spoof(live: LiveSample, medium: str, seed: int,
               profiles: dict[str, MediumProfile] | None = None) -> SpoofSample:
    """Compose degradation steps 1 -> 2 -> 3 -> 4 and record the exact noise."""
    if profiles is None:
        profiles = load_medium_profiles()
    if medium == "identity":
        profile = MediumProfile.identity()
    elif medium in profiles:
        profile = profiles[medium]
    else:
        raise SynthError(f"unknown medium {medium!r}; registered: "
                         f"{sorted(profiles)} + identity")
    img = apply_color_distortion(live.rgb, profile)
    img = apply_display_artifacts(img, profile)
    img = apply_presenting_artifacts(img, profile, seed)
    img = apply_imaging_artifacts(img, profile, seed)
    sd = live.depth.shape[0]
    return SpoofSample(rgb=img, source=live, medium=medium,
                       gt_noise=img - live.rgb,
                       depth_label=np.zeros((sd, sd), dtype=np.float64))


# ---------------------------------------------------------------------------
# Color space
# ---------------------------------------------------------------------------

def rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    """Standard HSV with hue scaled to [0,1]; preprocessing only, no gradient."""
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    maxc = img.max(axis=-1)
    minc = img.min(axis=-1)
    delta = maxc - minc
    v = maxc
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
        dsafe = np.where(delta > 0, delta, 1.0)
        h = np.select(
            [delta == 0, maxc == r, maxc == g],
            [np.zeros_like(maxc),
             ((g - b) / dsafe) % 6.0,
             (b - r) / dsafe + 2.0],
            default=(r - g) / dsafe + 4.0,
        ) / 6.0
    return np.stack([h, s, v], axis=-1)


def to_net_input(rgb: np.ndarray) -> np.ndarray:
    """Stack RGB with its HSV rendition into the 6-channel network input."""
    return np.concatenate([rgb, rgb_to_hsv(rgb)], axis=-1)


# ---------------------------------------------------------------------------
# Corpus generation
# ---------------------------------------------------------------------------

@dataclass
class GenConfig:
    size: int = 64
    seed: int = 7
    blur_level: int = 1
    mediums: tuple[str, ...] = DEFAULT_MEDIUMS
    train_live: int = 200
    train_spoof_per_medium: int = 50
    test_live: int = 60
    test_spoof_per_medium: int = 10
    profile_path: str | None = None
    extra: dict = field(default_factory=dict)

    def counts(self, split: str) -> tuple[int, int]:
        if split == "train":
            return self.train_live, self.train_spoof_per_medium
        return self.test_live, self.test_spoof_per_medium


def _subject_id(seed: int, split: str, index: int) -> int:
    # structurally disjoint between splits for a fixed corpus seed
    return (seed % (1 << 20)) * (1 << 22) + (0 if split == "train" else 1) * (1 << 21) + index


def gen_corpus(cfg: GenConfig, out_dir: str, workers: int = 1) -> list[dict]:
    """Generate the corpus on disk and return the manifest rows.

    Samples derive their RNG streams from (seed, split, index), so generation
    is order-independent and safe to parallelize; the manifest is written by
    the caller thread. The train/test split is disjoint by subject id.
    """
    for split in ("train", "test"):
        n_live, n_spoof = cfg.counts(split)
        if n_live < 1 or (cfg.mediums and n_spoof < 1):
            raise SynthError(f"{split}: counts per class must be >= 1")
    profiles = load_medium_profiles(cfg.profile_path)
    for m in cfg.mediums:
        if m not in profiles:
            raise SynthError(f"unknown medium {m!r} in config")
    os.makedirs(out_dir, exist_ok=True)
    for sub in ("images", "noise", "depth"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    jobs = []
    for split in ("train", "test"):
        n_live, n_spoof = cfg.counts(split)
        live_subjects = [_subject_id(cfg.seed, split, i) for i in range(n_live)]
        idx = 0
        for i in range(n_live):
            jobs.append((split, idx, "live", "live", live_subjects[i], None))
            idx += 1
        for mi, medium in enumerate(cfg.mediums):
            for j in range(n_spoof):
                src_pick = rng_from(cfg.seed, 5, mi, j,
                                    0 if split == "train" else 1).integers(n_live)
                jobs.append((split, idx, "spoof", medium,
                             live_subjects[int(src_pick)], (mi, j)))
                idx += 1

    def build(job):
        split, idx, label, medium, subject, spoof_key = job
        live = gen_live_face(subject, cfg.size)
        if label == "live":
            rgb = blur_by_kernel_size(live.rgb, cfg.blur_level)
            noise = None
            depth = live.depth
        else:
            mi, j = spoof_key
            spoof_seed = int(rng_from(cfg.seed, 6, mi, j,
                                      0 if split == "train" else 1).integers(1 << 62))
            spoof = make_spoof(live, medium, spoof_seed, profiles)
            rgb = blur_by_kernel_size(spoof.rgb, cfg.blur_level)
            src_rgb = blur_by_kernel_size(live.rgb, cfg.blur_level)
            noise = rgb - src_rgb  # exact residual after corpus-level blur
            depth = live.depth    # face-shape depth of the underlying subject
        return split, idx, label, medium, subject, rgb, noise, depth

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            built = list(pool.map(build, jobs))
    else:
        built = [build(j) for j in jobs]

    rows = []
    train_subjects = set()
    test_subjects = set()
    for split, idx, label, medium, subject, rgb, noise, depth in built:
        (train_subjects if split == "train" else test_subjects).add(subject)
        stem = f"{split}_{idx:05d}_{label}_{medium}"
        img_rel = f"images/{stem}.ppm"
        depth_rel = f"depth/{stem}.dspd"
        formats.write_ppm(os.path.join(out_dir, img_rel), rgb)
        formats.write_plane(os.path.join(out_dir, depth_rel), depth,
                            formats.DEPTH_MAGIC)
        noise_rel = ""
        if noise is not None:
            noise_rel = f"noise/{stem}.dspn"
            formats.write_plane(os.path.join(out_dir, noise_rel), noise,
                                formats.NOISE_MAGIC)
        rows.append({"path": img_rel, "label": label, "medium": medium,
                     "subject_id": str(subject), "split": split,
                     "noise_path": noise_rel, "depth_path": depth_rel})
    if train_subjects & test_subjects:
        raise SynthError("subject leakage between splits")
    formats.write_manifest(os.path.join(out_dir, "manifest.csv"), rows)
    return rows
