"""Target/search crop extraction, Laplace motion augmentation and crop<->frame mapping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.ndimage import map_coordinates

from ..errors import ValidationError
from ..geometry import BBox, intersection
from .network import RegNetConfig


def laplace_sample(mu: float, b: float, rng: np.random.Generator, size=None):
    """Inverse-CDF draw from Laplace(mu, b)."""
    if b < 0:
        raise ValidationError("Laplace scale must be >= 0")
    if size is None:
        u = 0.0
        while u == 0.0:
            u = rng.random()
        d = u - 0.5
        if d == 0.0:
            return float(mu)
        return float(mu - b * math.copysign(1.0, d) * math.log(1.0 - 2.0 * abs(d)))
    u = rng.random(size)
    u[u == 0.0] = 0.5
    d = u - 0.5
    return mu - b * np.sign(d) * np.log(1.0 - 2.0 * np.abs(d))


@dataclass
class CropSampler:
    """Random search-region placement around the reference box.

    Center shifts are Laplace in units of box width/height; size changes are
    Laplace on the log scale, clamped to ``[scale_min, scale_max]``.
    """

    b_shift: float = 0.2
    b_scale: float = 1.0 / 15.0
    scale_min: float = 0.6
    scale_max: float = 1.4
    seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.b_shift < 0 or self.b_scale < 0:
            raise ValidationError("Laplace scales must be non-negative")
        if not self.scale_min <= 1.0 <= self.scale_max:
            raise ValidationError("scale clamp must bracket 1")
        self.rng = np.random.default_rng(self.seed)

    def perturb(self, box: BBox) -> BBox:
        cx, cy = box.center
        w, h = box.width, box.height
        cx = cx + w * laplace_sample(0.0, self.b_shift, self.rng)
        cy = cy + h * laplace_sample(0.0, self.b_shift, self.rng)
        sw = min(max(math.exp(laplace_sample(0.0, self.b_scale, self.rng)), self.scale_min), self.scale_max)
        sh = min(max(math.exp(laplace_sample(0.0, self.b_scale, self.rng)), self.scale_min), self.scale_max)
        return BBox.from_center(cx, cy, w * sw, h * sh)


def search_region(box: BBox, cfg: RegNetConfig) -> BBox:
    return box.dilate(cfg.context_factor)


def extract(frame: np.ndarray, region: BBox, size: int) -> np.ndarray:
    """Bilinear resample of ``region`` to ``size x size``; zero outside the frame."""
    h, w = frame.shape
    if intersection(region, BBox(0.0, 0.0, float(w), float(h))) is None:
        raise ValidationError(f"crop {region.as_tuple()} lies entirely outside the {w}x{h} frame")
    t = (np.arange(size) + 0.5) / size
    xs = region.x1 + t * region.width - 0.5
    ys = region.y1 + t * region.height - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return map_coordinates(frame, [yy, xx], order=1, mode="constant", cval=0.0)


def box_to_crop(box: BBox, region: BBox, scale: float) -> np.ndarray:
    """Frame-pixel box -> scaled crop coordinates in ``[0, scale]``."""
    return np.array([
        (box.x1 - region.x1) / region.width * scale,
        (box.y1 - region.y1) / region.height * scale,
        (box.x2 - region.x1) / region.width * scale,
        (box.y2 - region.y1) / region.height * scale,
    ])


def crop_to_box(vec, region: BBox, scale: float) -> tuple[float, float, float, float]:
    """Inverse of :func:`box_to_crop`; returns raw corners, possibly unordered."""
    u1, v1, u2, v2 = (float(v) / scale for v in vec)
    return (
        region.x1 + u1 * region.width,
        region.y1 + v1 * region.height,
        region.x1 + u2 * region.width,
        region.y1 + v2 * region.height,
    )


def crop_pair(prev_frame: np.ndarray, prev_box: BBox, curr_frame: np.ndarray,
              curr_box: Optional[BBox], sampler: Optional[CropSampler], cfg: RegNetConfig):
    """Build ``(target crop, search crop, regression target or None, search region)``.

    Without a sampler the search region is centered on ``prev_box`` (inference);
    with one it is a Laplace perturbation of ``prev_box`` (training).
    """
    if prev_box.area <= 0:
        raise ValidationError("previous box has zero area")
    target_region = search_region(prev_box, cfg)
    reference = prev_box if sampler is None else sampler.perturb(prev_box)
    s_region = search_region(reference, cfg)
    target = extract(prev_frame, target_region, cfg.crop_size)
    search = extract(curr_frame, s_region, cfg.crop_size)
    y = None if curr_box is None else box_to_crop(curr_box, s_region, cfg.output_scale)
    return target, search, y, s_region
