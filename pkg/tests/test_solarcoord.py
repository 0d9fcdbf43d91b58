import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from solartrack.errors import ValidationError
from solartrack.geometry import BBox
from solartrack.solarcoord import (
    ImageHeader,
    box_within_limb,
    hpc_box_to_pixel,
    hpc_to_pixel,
    on_disk,
    pixel_to_hpc,
)

AIA = ImageHeader(0.6, 0.6, 2048.5, 2048.5, 959.6, 4096, 4096)

finite = st.floats(-3000, 3000, allow_nan=False)


def test_center_maps_to_reference_pixel():
    assert hpc_to_pixel(0.0, 0.0, AIA) == (2047.5, 2047.5)
    assert pixel_to_hpc(2047.5, 2047.5, AIA) == (0.0, 0.0)


def test_known_offset():
    px, py = hpc_to_pixel(600.0, 0.0, AIA)
    assert px == pytest.approx(3047.5, abs=1e-9)
    assert pixel_to_hpc(3047.5, py, AIA)[0] == pytest.approx(600.0, abs=1e-9)


def test_north_is_up():
    _, py = hpc_to_pixel(0.0, 60.0, AIA)
    assert py == pytest.approx(2047.5 - 100.0)


@given(finite, finite)
def test_round_trip(x, y):
    bx, by = pixel_to_hpc(*hpc_to_pixel(x, y, AIA), AIA)
    assert abs(bx - x) < 1e-9 and abs(by - y) < 1e-9


def test_non_finite_rejected():
    with pytest.raises(ValidationError):
        hpc_to_pixel(float("nan"), 0.0, AIA)


@pytest.mark.parametrize("kw", [dict(cdelt1=0), dict(rsun=-1), dict(crpix1=5000), dict(width=0)])
def test_header_validation(kw):
    base = dict(cdelt1=0.6, cdelt2=0.6, crpix1=10, crpix2=10, rsun=900, width=20, height=20)
    with pytest.raises(ValidationError):
        ImageHeader(**{**base, **kw})


def test_on_disk_examples():
    r = 959.6
    assert on_disk(0, 0, r)
    assert not on_disk(r, r, r)
    for k in range(16):
        th = 2 * math.pi * k / 16
        # nudge inward by one ulp-scale amount so rounding in cos/sin cannot push past the limb
        assert on_disk(r * math.cos(th) * (1 - 1e-15), r * math.sin(th) * (1 - 1e-15), r)
    assert on_disk(r, 0, r) and on_disk(0, -r, r)


def test_box_within_limb():
    assert box_within_limb(BBox(-50, -50, 50, 50), 960)
    assert not box_within_limb(BBox(1000, -10, 1100, 10), 960)
    # one corner (700, 700) lies past the limb, the rest inside
    assert not box_within_limb(BBox(0, 0, 700, 700), 960)


def test_box_to_pixel_flips_y():
    b = hpc_box_to_pixel(BBox(-60, -30, 60, 90), AIA)
    assert b == BBox(2047.5 - 100, 2047.5 - 150, 2047.5 + 100, 2047.5 + 50)
