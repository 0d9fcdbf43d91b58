from dataclasses import replace

import numpy as np
import pytest

from solartrack.dataset import load_corpus
from solartrack.errors import ValidationError
from solartrack.synthgen import (
    BRIGHT_AMPLITUDE,
    SynthConfig,
    derive_seed,
    disk_background,
    generate,
    generate_corpus,
    jittered_config,
    write_corpus,
)


def test_pure_drift_moves_one_pixel_per_frame():
    seq = generate(SynthConfig(jitter_sigma=0.0, growth_rate=0.0, drift=1.0, seed=4))
    cx = np.array([b.center[0] for b in seq.truth])
    cy = np.array([b.center[1] for b in seq.truth])
    np.testing.assert_allclose(np.diff(cx), 1.0, atol=1e-9)
    np.testing.assert_allclose(np.diff(cy), 0.0, atol=1e-12)


def test_same_seed_bit_identical():
    a = generate(SynthConfig(seed=11, event_kind="dark"))
    b = generate(SynthConfig(seed=11, event_kind="dark"))
    assert all(np.array_equal(x, y) for x, y in zip(a.frames, b.frames))
    assert a.truth == b.truth and a.annotations == b.annotations


def test_two_sigma_region_inside_box():
    cfg = SynthConfig(seed=3, noise_sigma=0.0, growth_rate=0.02)
    seq = generate(cfg)
    bg = disk_background(cfg.image_size, cfg.disk_radius)
    yy, xx = np.mgrid[0:cfg.image_size, 0:cfg.image_size] + 0.5
    for frame, box in zip(seq.frames, seq.truth):
        g = (frame - bg) / BRIGHT_AMPLITUDE
        inside = g >= np.exp(-2.0) * (1 - 1e-9)
        assert inside.any()
        assert np.all(xx[inside] >= box.x1) and np.all(xx[inside] <= box.x2)
        assert np.all(yy[inside] >= box.y1) and np.all(yy[inside] <= box.y2)


def test_dark_events_darken():
    cfg = SynthConfig(seed=2, event_kind="dark", noise_sigma=0.0)
    seq = generate(cfg)
    bg = disk_background(cfg.image_size, cfg.disk_radius)
    assert np.all(seq.frames[0] <= bg + 1e-12)
    assert seq.meta["event_type"] == "CH"


def test_annotation_cadence():
    seq = generate(SynthConfig(n_frames=23, annotate_every=5))
    assert seq.annotated_indices() == [0, 5, 10, 15, 20]
    assert len(seq.truth) == 23


def test_start_off_disk_rejected():
    with pytest.raises(ValidationError):
        generate(SynthConfig(start=(2.0, 2.0)))


@pytest.mark.parametrize("kw", [dict(event_kind="grey"), dict(disk_radius=80), dict(n_frames=1),
                                dict(annotate_every=0), dict(blob_axes=(0, 3))])
def test_config_validation(kw):
    with pytest.raises(ValidationError):
        SynthConfig(**kw)


def test_corpus_single_matches_generate():
    (seq,) = generate_corpus(1, SynthConfig(), 9)
    ref = generate(jittered_config(SynthConfig(), derive_seed(9, 0)))
    assert all(np.array_equal(a, b) for a, b in zip(seq.frames, ref.frames))


def test_corpus_master_seed_matters():
    a = generate_corpus(2, SynthConfig(n_frames=6), 1)
    b = generate_corpus(2, SynthConfig(n_frames=6), 2)
    assert not np.array_equal(a[0].frames[0], b[0].frames[0])


def test_corpus_annotated_fraction():
    corpus = generate_corpus(200, SynthConfig(n_frames=40, image_size=64, disk_radius=28), 0)
    for seq in corpus:
        n = len(seq.frames)
        assert abs(len(seq.annotations) - n / 5) <= 1


def test_jitter_bounds():
    t = SynthConfig(drift=2.0, blob_axes=(8.0, 4.0))
    for s in range(20):
        c = jittered_config(t, s)
        assert 1.5 <= c.drift <= 2.5
        assert 6.0 <= c.blob_axes[0] <= 10.0


def test_mixed_kinds_alternate():
    corpus = generate_corpus(4, SynthConfig(n_frames=4), 0, mix_kinds=True)
    assert [s.meta["event_type"] for s in corpus] == ["AR", "CH", "AR", "CH"]


def test_write_and_reload(tmp_path):
    corpus = generate_corpus(2, replace(SynthConfig(), n_frames=6), 5)
    write_corpus(tmp_path, corpus)
    back = load_corpus(tmp_path)
    assert len(back) == 2
    assert back[0].annotations == corpus[0].annotations
    assert (tmp_path / f"0000_{corpus[0].name}" / "truth.csv").exists()
