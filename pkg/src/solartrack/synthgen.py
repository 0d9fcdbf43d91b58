"""Deterministic synthetic solar-disk sequences with dense ground truth.

A limb-darkened disk carries one anisotropic Gaussian blob that drifts
horizontally (rotation), random-walks vertically (jitter) and grows at a
fixed rate. Bright blobs are added to the background (active-region-like),
dark blobs multiply it down (coronal-hole-like). The ground-truth box is the
blob's axis-aligned 2-sigma extent clipped to the frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import Annotation, Sequence, write_sequence
from .errors import ValidationError
from .geometry import BBox

LIMB_DARKENING = 0.6
DISK_LEVEL = 0.55
BRIGHT_AMPLITUDE = 0.4
DARK_DEPTH = 0.7
NOISE_SIGMA = 0.01
CORPUS_JITTER = 0.25


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 128
    disk_radius: float = 56.0
    event_kind: str = "bright"
    n_frames: int = 40
    blob_axes: tuple = (6.0, 4.0)
    drift: float = 1.0
    jitter_sigma: float = 0.3
    growth_rate: float = 0.0
    annotate_every: int = 5
    seed: int = 0
    start: Optional[tuple] = None
    noise_sigma: float = NOISE_SIGMA

    def __post_init__(self):
        if self.event_kind not in ("bright", "dark"):
            raise ValidationError(f"event_kind must be 'bright' or 'dark', got {self.event_kind!r}")
        if not 0 < self.disk_radius < self.image_size / 2:
            raise ValidationError("disk_radius must be below half the image size")
        if self.n_frames < 2:
            raise ValidationError("n_frames must be >= 2")
        if self.annotate_every < 1:
            raise ValidationError("annotate_every must be >= 1")
        if min(self.blob_axes) <= 0:
            raise ValidationError("blob axes must be positive")


def disk_background(size: int, radius: float) -> np.ndarray:
    c = size / 2.0
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    r2 = ((xx - c) ** 2 + (yy - c) ** 2) / radius ** 2
    mu = np.sqrt(np.clip(1.0 - r2, 0.0, 1.0))
    img = DISK_LEVEL * (1.0 - LIMB_DARKENING * (1.0 - mu))
    img[r2 > 1.0] = 0.0
    return img


def _trajectory(cfg: SynthConfig, rng: np.random.Generator):
    c = cfg.image_size / 2.0
    n = cfg.n_frames
    a0, b0 = cfg.blob_axes
    grow = (1.0 + cfg.growth_rate) ** np.arange(n)
    if cfg.start is not None:
        x0, y0 = (float(v) for v in cfg.start)
        if (x0 - c) ** 2 + (y0 - c) ** 2 > cfg.disk_radius ** 2:
            raise ValidationError(f"blob start ({x0}, {y0}) is off the disk")
    else:
        # keep the whole drift path inside 60% of the radius
        span = cfg.drift * (n - 1)
        reach = 0.6 * cfg.disk_radius
        lo = c - reach
        hi = c + reach - span
        if hi < lo:
            lo = hi = c - span / 2.0
        x0 = rng.uniform(lo, hi)
        y0 = c + rng.uniform(-0.4, 0.4) * cfg.disk_radius
    steps = rng.normal(0.0, cfg.jitter_sigma, size=n) if cfg.jitter_sigma > 0 else np.zeros(n)
    steps[0] = 0.0
    xs = x0 + cfg.drift * np.arange(n)
    ys = y0 + np.cumsum(steps)
    return xs, ys, a0 * grow, b0 * grow


def generate(cfg: SynthConfig) -> Sequence:
    """Render one sequence; annotations every ``annotate_every`` frames from frame 0."""
    rng = np.random.default_rng(cfg.seed)
    xs, ys, sa, sb = _trajectory(cfg, rng)
    bg = disk_background(cfg.image_size, cfg.disk_radius)
    size = cfg.image_size
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    frames, truth = [], []
    for t in range(cfg.n_frames):
        g = np.exp(-0.5 * (((xx - xs[t]) / sa[t]) ** 2 + ((yy - ys[t]) / sb[t]) ** 2))
        if cfg.event_kind == "bright":
            img = bg + BRIGHT_AMPLITUDE * g
        else:
            img = bg * (1.0 - DARK_DEPTH * g)
        if cfg.noise_sigma > 0:
            img = img + rng.normal(0.0, cfg.noise_sigma, size=img.shape)
        frames.append(np.clip(img, 0.0, 1.0))
        box = BBox(xs[t] - 2 * sa[t], ys[t] - 2 * sb[t], xs[t] + 2 * sa[t], ys[t] + 2 * sb[t])
        truth.append(box.clamp(size, size))
    annotations = {
        i: Annotation.from_bbox(i, truth[i]) for i in range(0, cfg.n_frames, cfg.annotate_every)
    }
    meta = {"event_id": f"syn{cfg.seed:020d}", "event_type": "AR" if cfg.event_kind == "bright" else "CH",
            "seed": cfg.seed}
    return Sequence(frames, annotations, meta, truth)


def derive_seed(master_seed: int, index: int) -> int:
    """64-bit per-sequence seed, independent of generation order."""
    ss = np.random.SeedSequence([master_seed & (2 ** 64 - 1), index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def jittered_config(template: SynthConfig, seed: int) -> SynthConfig:
    """Template with axes, drift, jitter, growth and length scaled by up to +/-25%."""
    rng = np.random.default_rng(seed)
    f = lambda: 1.0 + rng.uniform(-CORPUS_JITTER, CORPUS_JITTER)  # noqa: E731
    axes = tuple(float(a) * f() for a in template.blob_axes)
    n_frames = max(2, int(round(template.n_frames * f())))
    return replace(
        template,
        blob_axes=axes,
        drift=template.drift * f(),
        jitter_sigma=template.jitter_sigma * f(),
        growth_rate=template.growth_rate * f(),
        n_frames=n_frames,
        seed=seed,
        start=None,
    )


def generate_corpus(n_sequences: int, cfg_template: SynthConfig, master_seed: int,
                    mix_kinds: bool = False) -> list[Sequence]:
    """``mix_kinds`` alternates bright and dark events (even index bright)."""
    if n_sequences < 1:
        raise ValidationError("n_sequences must be >= 1")
    out = []
    for i in range(n_sequences):
        cfg = jittered_config(cfg_template, derive_seed(master_seed, i))
        if mix_kinds:
            cfg = replace(cfg, event_kind="bright" if i % 2 == 0 else "dark")
        out.append(generate(cfg))
    return out


def write_corpus(root, corpus: list[Sequence]) -> list[Path]:
    root = Path(root)
    paths = []
    for i, seq in enumerate(corpus):
        p = root / f"{i:04d}_{seq.name}"
        write_sequence(p, seq)
        paths.append(p)
    return paths
