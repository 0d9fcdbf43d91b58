"""Helioprojective-Cartesian <-> pixel conversion and solar-limb tests.

Header CRPIX values follow the FITS 1-based convention; pixel coordinates
everywhere else in the toolkit are 0-based with rows growing downward,
so solar north (positive HPC y) maps to decreasing row index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime
from typing import Optional

from .errors import ValidationError
from .geometry import BBox


@dataclass(frozen=True)
class ImageHeader:
    cdelt1: float
    cdelt2: float
    crpix1: float
    crpix2: float
    rsun: float
    width: int
    height: int
    obs_time: Optional[datetime] = None

    def __post_init__(self):
        if not (self.cdelt1 > 0 and self.cdelt2 > 0):
            raise ValidationError("CDELT values must be positive")
        if not self.rsun > 0:
            raise ValidationError("RSUN must be positive")
        if self.width < 1 or self.height < 1:
            raise ValidationError("header dimensions must be positive")
        if not (1 <= self.crpix1 <= self.width + 1 and 1 <= self.crpix2 <= self.height + 1):
            raise ValidationError(
                f"reference pixel ({self.crpix1}, {self.crpix2}) outside "
                f"{self.width}x{self.height} frame"
            )

    @property
    def rsun_pixels(self) -> float:
        return self.rsun / self.cdelt1


def _check_finite(*vals):
    if not all(math.isfinite(v) for v in vals):
        raise ValidationError(f"non-finite coordinate in {vals}")


def hpc_to_pixel(x_arcsec: float, y_arcsec: float, h: ImageHeader) -> tuple[float, float]:
    _check_finite(x_arcsec, y_arcsec)
    px = (h.crpix1 - 1.0) + x_arcsec / h.cdelt1
    py = (h.crpix2 - 1.0) - y_arcsec / h.cdelt2
    return px, py


def pixel_to_hpc(px: float, py: float, h: ImageHeader) -> tuple[float, float]:
    _check_finite(px, py)
    x = (px - (h.crpix1 - 1.0)) * h.cdelt1
    y = ((h.crpix2 - 1.0) - py) * h.cdelt2
    return x, y


def on_disk(x_arcsec: float, y_arcsec: float, rsun_arcsec: float) -> bool:
    if not rsun_arcsec > 0:
        raise ValidationError("solar radius must be positive")
    return x_arcsec * x_arcsec + y_arcsec * y_arcsec <= rsun_arcsec * rsun_arcsec


def box_within_limb(box: BBox, rsun_arcsec: float) -> bool:
    """True when every corner of an arcsec box lies on the visible disk."""
    return all(on_disk(x, y, rsun_arcsec) for x, y in box.corners())


def hpc_box_to_pixel(box: BBox, h: ImageHeader) -> BBox:
    """Pixel-space hull of an HPC box; the y flip swaps top and bottom."""
    xa, ya = hpc_to_pixel(box.x1, box.y1, h)
    xb, yb = hpc_to_pixel(box.x2, box.y2, h)
    return BBox(min(xa, xb), min(ya, yb), max(xa, xb), max(ya, yb))
