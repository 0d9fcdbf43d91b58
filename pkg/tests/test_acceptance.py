"""Acceptance suite: one test per numbered criterion.

Each test carries an ``acceptance`` marker; ``conftest.py`` turns the
outcomes into one PASS/FAIL line per criterion at the end of the run.
"""

import math
import time
from datetime import datetime, timezone

import numpy as np
import pytest

from gradcheck import TINY_ARCHS, max_gradient_error
from oracles import brute_force_max_rect, cell_counts
from solartrack.builder import build_dataset
from solartrack.dataset import Annotation, format_annotations, load_sequence, parse_annotations_text
from solartrack.geometry import BBox, BinaryMask, maximal_inscribed_box
from solartrack.harness import (
    ExperimentSpec,
    read_sweep_csv,
    report_table,
    run_experiment,
    sweep,
    write_sweep_csv,
)
from solartrack.ingest import DEMO_FIXTURES, HekQuery, IngestClient
from solartrack.metrics import FramePair, MetricReport, area_precision_recall, atb, fscore, iogt, iou, ota
from solartrack.regnet import checkpoint as ckpt_io
from solartrack.regnet.crops import CropSampler, crop_pair, laplace_sample
from solartrack.regnet.network import RegNetConfig, backward, forward, init_params, loss, sgd_step
from solartrack.regnet.training import TrainConfig, train
from solartrack.solarcoord import ImageHeader, hpc_to_pixel, pixel_to_hpc
from solartrack.synthgen import SynthConfig, generate, generate_corpus, write_corpus

UTC = timezone.utc
GRID = 512


def acceptance(number, title):
    return pytest.mark.acceptance(number, title)


# -- 1 ----------------------------------------------------------------------

def _random_boxes(rng, n):
    """Integer boxes in [0, GRID]^2 with positive width and height."""
    out = np.empty((n, 4), dtype=np.int64)
    for axis in (0, 1):
        lo = rng.integers(0, GRID, n)
        hi = rng.integers(0, GRID + 1, n)
        hi = np.where(hi <= lo, lo + 1 + (lo - hi) % (GRID - lo), hi)
        out[:, axis], out[:, axis + 2] = lo, hi
    return out


def _axis_cells(lo, hi):
    cells = np.arange(GRID)
    return (cells >= lo[:, None]) & (cells < hi[:, None])


@acceptance(1, "metric oracle equivalence on 10,000 integer box pairs")
def test_metric_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240101)
    n = 10_000
    g = _random_boxes(rng, n)
    # half the predictions are perturbed copies so matches and near-misses both occur
    p = _random_boxes(rng, n)
    near = rng.random(n) < 0.5
    shift = rng.integers(-20, 21, (n, 4))
    pert = np.clip(g + shift, 0, GRID)
    pert[:, 2] = np.maximum(pert[:, 2], pert[:, 0] + 1)
    pert[:, 3] = np.maximum(pert[:, 3], pert[:, 1] + 1)
    pert = np.minimum(pert, GRID)
    pert[:, 0] = np.minimum(pert[:, 0], pert[:, 2] - 1)
    pert[:, 1] = np.minimum(pert[:, 1], pert[:, 3] - 1)
    p[near] = pert[near]

    # unit-cell membership per axis; a box's cell set is the product of its two axes
    gx, gy = _axis_cells(g[:, 0], g[:, 2]), _axis_cells(g[:, 1], g[:, 3])
    px, py = _axis_cells(p[:, 0], p[:, 2]), _axis_cells(p[:, 1], p[:, 3])
    n_gt = gx.sum(1) * gy.sum(1)
    n_pred = px.sum(1) * py.sum(1)
    n_inter = (gx & px).sum(1) * (gy & py).sum(1)
    n_union = n_gt + n_pred - n_inter

    # the union shortcut is itself checked against full 2-D rasters on a subset
    for k in range(0, n, 50):
        a, b, i, u = cell_counts(g[k], p[k], GRID)
        assert (a, b, i, u) == (n_gt[k], n_pred[k], n_inter[k], n_union[k])

    worst = 0.0
    for k in range(n):
        gt, pred = BBox(*map(float, g[k])), BBox(*map(float, p[k]))
        prec, rec = area_precision_recall(gt, pred)
        got = (iou(gt, pred), iogt(gt, pred), atb(gt, pred), prec, rec)
        want = (n_inter[k] / n_union[k], n_inter[k] / n_gt[k], n_pred[k] / n_gt[k],
                n_inter[k] / n_pred[k], n_inter[k] / n_gt[k])
        worst = max(worst, max(abs(x - y) for x, y in zip(got, want)))
    elapsed = time.perf_counter() - t0
    print(f"criterion 1: max |delta| = {worst:.3e}, {elapsed:.2f} s, {near.sum()} near pairs")
    assert worst < 1e-12
    assert 0 < (n_inter == 0).sum() < n
    assert elapsed < 10.0


# -- 2 ----------------------------------------------------------------------

def _frame_set(rng, full):
    frames = []
    for i in range(int(rng.integers(1, 25))):
        x, y = rng.uniform(0, 400, 2)
        gt = BBox(x, y, x + rng.uniform(5, 80), y + rng.uniform(5, 80))
        # frame 0 is always annotated, so every set has something to score
        if rng.random() < 0.15 and frames:
            frames.append(FramePair(i, None, gt))  # unannotated frame, never scored
            continue
        if not full and rng.random() < 0.3:
            frames.append(FramePair(i, gt, None))
            continue
        d = rng.normal(0, rng.choice([1.0, 10.0, 40.0]), 2)
        s = math.exp(rng.normal(0, 0.3))
        cx, cy = gt.center
        pred = BBox.from_center(cx + d[0], cy + d[1], gt.width * s, gt.height * s)
        frames.append(FramePair(i, gt, pred))
    return frames


@acceptance(2, "precision = recall, ota = 2F - 1 with full predictions, ota in [-1, 1]")
def test_metric_identities():
    rng = np.random.default_rng(7)
    n_full = n_partial = 0
    for k in range(1000):
        full = k % 2 == 0
        frames = _frame_set(rng, full)
        for overlap in (iou, iogt):
            o = ota(frames, overlap=overlap)
            assert -1.0 <= o <= 1.0
            if full:
                prec, rec, f = fscore(frames, overlap=overlap)
                assert prec == rec
                assert abs(o - (2.0 * f - 1.0)) < 1e-12
        if full:
            n_full += 1
        else:
            n_partial += 1
    print(f"criterion 2: {n_full} fully predicted sets, {n_partial} with gaps")


# -- 3 ----------------------------------------------------------------------

@acceptance(3, "reverse-mode gradients match central differences (5 seeds x 2 architectures)")
def test_gradient_check():
    t0 = time.perf_counter()
    worst = {}
    for name, cfg in sorted(TINY_ARCHS.items()):
        assert cfg.crop_size == 16
        worst[name] = max(max_gradient_error(cfg, seed) for seed in range(5))
    elapsed = time.perf_counter() - t0
    print(f"criterion 3: worst relative error {worst}, {elapsed:.1f} s")
    assert len(worst) >= 2
    assert all(v < 1e-4 for v in worst.values())
    assert elapsed < 120.0


# -- 4 ----------------------------------------------------------------------

@acceptance(4, "overfit one crop pair: 500 steps bring the loss below 5% of its start")
def test_overfit_sanity():
    seq = generate(SynthConfig(seed=11))
    cfg = RegNetConfig()
    t, s, y, _ = crop_pair(seq.frames[0], seq.gt_box(0), seq.frames[5], seq.gt_box(5),
                           CropSampler(seed=1), cfg)
    desk = TrainConfig.preset("desk")
    p = init_params(cfg, 1)
    v = p.zeros_like()
    first = loss(forward(p, cfg, t, s), y)
    for _ in range(500):
        _, g = backward(p, cfg, t, s, y)
        p, v = sgd_step(p, g, v, desk.learning_rate, desk.momentum)
    final = loss(forward(p, cfg, t, s), y)
    print(f"criterion 4: loss {first:.4f} -> {final:.4f} ({final / first:.2%})")
    assert final < 0.05 * first


# -- 5 ----------------------------------------------------------------------

@pytest.mark.slow
@acceptance(5, "end-to-end synthetic benchmark: final IoU >= 0.4 and above the static baseline")
def test_end_to_end_synthetic(tmp_path):
    spec = ExperimentSpec()
    assert spec.model_name == "mSYN"
    assert spec.train.startswith("synth:200:") and spec.test.startswith("synth:50:")
    assert (spec.training.iterations, spec.training.checkpoint_every) == (5_000, 500)
    t0 = time.perf_counter()
    res = run_experiment(spec, tmp_path / "run", make_plots=False)
    elapsed = time.perf_counter() - t0
    assert res.error is None
    assert [c.iteration for c in res.checkpoints] == list(range(500, 5_001, 500))
    final, static = res.final.iou_mean, res.baseline.iou_mean
    print(f"criterion 5: final IoU {final:.4f}, static {static:.4f}, {elapsed:.0f} s")
    print((tmp_path / "run" / "table.txt").read_text())
    assert final >= 0.4
    assert final > static
    assert elapsed < 1800.0


# -- 6 ----------------------------------------------------------------------

TINY_NET = RegNetConfig(crop_size=16, conv_spec=((2, 3, 2),), fc_widths=(4,))
SMALL = SynthConfig(image_size=64, disk_radius=28, blob_axes=(4.0, 3.0), n_frames=16)


@acceptance(6, "checkpoint cadence 2000..10000, 5-row sweep CSV, 100 checkpoints for the full preset")
def test_checkpoint_cadence(tmp_path):
    tcfg = TrainConfig(iterations=10_000, checkpoint_every=2_000, seed=3)
    expected = [2_000, 4_000, 6_000, 8_000, 10_000]
    assert tcfg.checkpoint_iterations() == expected
    cks = train(generate_corpus(4, SMALL, 5), TINY_NET, tcfg)
    assert [c.iteration for c in cks] == expected
    write_sweep_csv(tmp_path / "sweep.csv", sweep(cks, generate_corpus(2, SMALL, 6)))
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(lines) == 1 + 5
    assert [r.iteration for r in read_sweep_csv(tmp_path / "sweep.csv")] == expected

    paper = TrainConfig.preset("paper")
    assert (paper.iterations, paper.checkpoint_every) == (200_000, 2_000)
    its = paper.checkpoint_iterations()
    assert len(its) == 100 and its[0] == 2_000 and its[-1] == 200_000


# -- 7 ----------------------------------------------------------------------

def _tiny_run(out, seed):
    spec = ExperimentSpec.from_kv({"train": "synth:3:1", "test": "synth:2:2", "crop_size": "16",
                                   "conv_spec": "2x3x2", "fc_widths": "4", "iterations": "40",
                                   "checkpoint_every": "10"}, seed=seed)
    run_experiment(spec, out, make_plots=False)
    ckpts = {p.name: p.read_bytes() for p in sorted((out / "checkpoints").glob("*.rgnt"))}
    return ckpts, (out / "sweep.csv").read_bytes()


def _tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@acceptance(7, "identical seeds give bit-identical checkpoints, sweep CSVs and corpora")
def test_determinism(tmp_path):
    a_ck, a_csv = _tiny_run(tmp_path / "a", 4)
    b_ck, b_csv = _tiny_run(tmp_path / "b", 4)
    assert len(a_ck) == 4
    assert a_ck == b_ck
    assert a_csv == b_csv
    c_ck, _ = _tiny_run(tmp_path / "c", 5)
    assert c_ck != a_ck

    write_corpus(tmp_path / "s1", generate_corpus(3, SynthConfig(n_frames=12), 9, mix_kinds=True))
    write_corpus(tmp_path / "s2", generate_corpus(3, SynthConfig(n_frames=12), 9, mix_kinds=True))
    t1, t2 = _tree_bytes(tmp_path / "s1"), _tree_bytes(tmp_path / "s2")
    assert len(t1) > 3
    assert t1 == t2


# -- 8 ----------------------------------------------------------------------

@acceptance(8, "maximal inscribed box equals brute force on 100 random 20x20 masks")
def test_inscribed_box_brute_force():
    rng = np.random.default_rng(8)
    checked = 0
    while checked < 100:
        density = rng.uniform(0.4, 0.95)
        a = rng.random((20, 20)) < density
        if not a.any():
            continue
        b = maximal_inscribed_box(BinaryMask.from_array(a))
        x1, y1, x2, y2 = (int(v) for v in b.as_tuple())
        assert a[y1:y2, x1:x2].all()
        assert b.area == brute_force_max_rect(a)
        checked += 1


# -- 9 ----------------------------------------------------------------------

@acceptance(9, "round trips: annotations byte-stable, HPC to pixel < 1e-9, checkpoint forward bit-identical")
def test_round_trips(tmp_path):
    rng = np.random.default_rng(9)
    frames = rng.choice(100_000, 1000, replace=False)
    anns = [Annotation(int(f), tuple(int(v) for v in rng.integers(-50, 5000, 4)),
                       tuple(int(v) for v in rng.integers(-50, 5000, 4))) for f in frames]
    text = format_annotations(anns)
    back = parse_annotations_text(text)
    assert back == anns
    assert format_annotations(back).encode() == text.encode()

    worst = 0.0
    for _ in range(1000):
        w, h = (int(v) for v in rng.integers(64, 4097, 2))
        hdr = ImageHeader(cdelt1=rng.uniform(0.3, 40), cdelt2=rng.uniform(0.3, 40),
                          crpix1=rng.uniform(1, w + 1), crpix2=rng.uniform(1, h + 1),
                          rsun=rng.uniform(900, 1000), width=w, height=h)
        x, y = rng.uniform(-1200, 1200, 2)
        px, py = hpc_to_pixel(x, y, hdr)
        x2, y2 = pixel_to_hpc(px, py, hdr)
        qx, qy = hpc_to_pixel(x2, y2, hdr)
        worst = max(worst, abs(x2 - x), abs(y2 - y), abs(qx - px), abs(qy - py))
    assert worst < 1e-9

    for name, cfg in (("default", RegNetConfig()), *sorted(TINY_ARCHS.items())):
        ck = ckpt_io.Checkpoint(123, cfg, init_params(cfg, 2))
        path = tmp_path / f"{name}.rgnt"
        ckpt_io.save(path, ck)
        loaded = ckpt_io.load(path)
        assert loaded.iteration == 123 and loaded.config == cfg
        t, s = rng.random((2, cfg.crop_size, cfg.crop_size))
        assert forward(loaded.params, cfg, t, s).tobytes() == forward(ck.params, cfg, t, s).tobytes()


# -- 10 ---------------------------------------------------------------------

@acceptance(10, "Laplace sampler: mean within 2% of mu, variance within 2% of 2b^2")
@pytest.mark.parametrize("mu,b", [(1.0, 0.2), (-2.0, 1.0), (0.5, 1.0 / 15.0), (3.0, 2.0)])
def test_laplace_moments(mu, b):
    x = laplace_sample(mu, b, np.random.default_rng(10), size=1_000_000)
    mean, var = float(x.mean()), float(x.var())
    print(f"criterion 10: mu={mu} b={b} mean={mean:.5f} var={var:.5f} (want {2 * b * b:.5f})")
    assert abs(mean - mu) <= 0.02 * abs(mu)
    assert abs(var - 2 * b * b) <= 0.02 * 2 * b * b


# -- 11 ---------------------------------------------------------------------

@acceptance(11, "report table renders the stored mAR row to four decimals")
def test_report_fidelity():
    rep = MetricReport(0.4297, 0.4164, 0.5060, 0.3987, 0.5495, 0.5411, 1.6461, 1)
    row = report_table({"mAR": rep}).splitlines()[1]
    assert row == "mAR, 0.4297, 0.4164, 0.5060, 0.3987, 0.5495, 0.5411, 1.6461"
    assert row.endswith("0.4297, 0.4164, 0.5060, 0.3987, 0.5495, 0.5411, 1.6461")


# -- 12 ---------------------------------------------------------------------

@acceptance(12, "fixture build: expected event directories, short and off-limb events removed")
def test_fixture_build(tmp_path):
    queries = [HekQuery("AR", datetime(2014, 1, 1, tzinfo=UTC), datetime(2014, 2, 1, tzinfo=UTC)),
               HekQuery("CH", datetime(2018, 1, 1, tzinfo=UTC), datetime(2018, 2, 1, tzinfo=UTC))]
    report = build_dataset(IngestClient.from_fixtures(DEMO_FIXTURES), queries, tmp_path)
    assert report.kept == ["ar-good", "ch-good"]
    reasons = set(report.dropped.values())
    assert "too_few_records" in reasons and "off_limb" in reasons
    assert sorted(p.name for p in tmp_path.iterdir() if p.is_dir()) == ["ar-good", "ch-good"]
    for name in report.kept:
        seq = load_sequence(tmp_path / name)
        assert len(seq.annotated_indices()) >= 3
    assert report.train == ["ar-good"] and report.test == ["ch-good"]
    print(f"criterion 12: kept {report.kept}, dropped {report.dropped}")
