"""Experiment protocol: train a model, sweep its checkpoints over a test corpus, tabulate.

Evaluation initializes each tracker from the first annotated box of a test
sequence, tracks every following frame, and scores only annotated frames
after the initial one. All scored frames are pooled into one report.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Union

from .dataset import Sequence, load_corpus
from .errors import DivergedError, ValidationError
from .metrics import DEFAULT_THRESHOLD, FramePair, MetricReport, aggregate, atb, iogt, iou
from .regnet import checkpoint as ckpt_io
from .regnet.checkpoint import Checkpoint
from .regnet.network import RegNetConfig
from .regnet.tracker import RegNetTracker
from .regnet.training import TrainConfig, train
from .synthgen import SynthConfig, generate_corpus
from .trackers import StaticTracker, Tracker

log = logging.getLogger(__name__)

MODEL_NAMES = ("mAR", "mCH", "mAR-CH", "mSYN")
MODEL_EVENT_TYPES = {"mAR": {"AR"}, "mCH": {"CH"}, "mAR-CH": {"AR", "CH"}, "mSYN": {"AR", "CH"}}
SWEEP_HEADER = ["iteration", "iou", "fscore_iou", "af1", "ota", "iogt", "fscore_iogt", "atb"]
TABLE_COLUMNS = ["Model", "IoU", "F-score (IoU)", "AF1-Score", "OTA", "IoGT", "F-score (IoGT)", "ATB"]


def parse_kv_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep or not key.strip():
            raise ValidationError(f"line {lineno}: expected key = value")
        key = key.strip()
        if key in out:
            raise ValidationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = val.strip()
    return out


# -- corpus selectors -----------------------------------------------------

def resolve_corpus(selector: str, event_types: Optional[set] = None,
                   synth_template: Optional[SynthConfig] = None) -> list[Sequence]:
    """``synth:<n>:<seed>[:bright|dark|mixed]`` or ``dir:<path>``.

    Directory corpora are filtered to ``event_types`` via each event's metadata.
    """
    kind, _, rest = selector.partition(":")
    if kind == "synth":
        parts = rest.split(":")
        if len(parts) not in (2, 3):
            raise ValidationError(f"bad synth selector {selector!r}")
        try:
            n, seed = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValidationError(f"bad synth selector {selector!r}") from None
        flavour = parts[2] if len(parts) == 3 else "mixed"
        template = synth_template or SynthConfig()
        if flavour == "mixed":
            return generate_corpus(n, template, seed, mix_kinds=True)
        if flavour not in ("bright", "dark"):
            raise ValidationError(f"unknown synthetic kind {flavour!r}")
        return generate_corpus(n, replace(template, event_kind=flavour), seed)
    if kind == "dir":
        path = Path(rest)
        if not path.is_dir():
            raise ValidationError(f"corpus directory {path} does not exist")
        corpus = load_corpus(path)
        if event_types is not None:
            corpus = [s for s in corpus if s.meta.get("event_type") in event_types]
        return corpus
    raise ValidationError(f"unknown corpus selector {selector!r}")


# -- experiment spec ------------------------------------------------------

def _parse_conv_spec(text: str) -> tuple:
    layers = []
    for item in text.split(","):
        item = item.strip()
        if item:
            layers.append(tuple(int(v) for v in item.split("x")))
    return tuple(layers)


@dataclass
class ExperimentSpec:
    model_name: str = "mSYN"
    train: str = "synth:200:1:mixed"
    test: str = "synth:50:2:mixed"
    regnet: RegNetConfig = field(default_factory=RegNetConfig)
    training: TrainConfig = field(default_factory=lambda: TrainConfig.preset("desk"))
    threshold: float = DEFAULT_THRESHOLD
    label_mode: str = "hek_box"

    def __post_init__(self):
        if self.model_name not in MODEL_NAMES:
            raise ValidationError(f"model_name must be one of {MODEL_NAMES}")
        if not 0 < self.threshold <= 1:
            raise ValidationError("threshold must lie in (0, 1]")
        if self.label_mode not in ("hek_box", "chain_inscribed"):
            raise ValidationError(f"unknown label mode {self.label_mode!r}")

    @classmethod
    def from_kv(cls, d: dict, preset: Optional[str] = None, seed: Optional[int] = None) -> "ExperimentSpec":
        d = dict(d)
        preset = preset or d.pop("preset", "desk")
        d.pop("preset", None)
        reg_kw, train_kw, top_kw = {}, {}, {}
        reg_fields = {f.name: f for f in fields(RegNetConfig)}
        train_fields = {f.name: f for f in fields(TrainConfig)}
        for k, v in d.items():
            try:
                if k == "conv_spec":
                    reg_kw[k] = _parse_conv_spec(v)
                elif k == "fc_widths":
                    reg_kw[k] = tuple(int(x) for x in v.split(",") if x.strip())
                elif k == "share_branch_weights":
                    reg_kw[k] = v.lower() in ("1", "true", "yes")
                elif k in reg_fields:
                    reg_kw[k] = int(v) if k == "crop_size" else float(v)
                elif k in train_fields:
                    train_kw[k] = int(v) if train_fields[k].type in ("int", int) else float(v)
                elif k == "threshold":
                    top_kw[k] = float(v)
                elif k in ("model_name", "train", "test", "label_mode"):
                    top_kw[k] = v
                else:
                    raise ValidationError(f"unknown spec key {k!r}")
            except ValueError as exc:
                if isinstance(exc, ValidationError):
                    raise
                raise ValidationError(f"bad value for {k!r}: {v!r}") from None
        if seed is not None:
            train_kw["seed"] = seed
        return cls(regnet=RegNetConfig(**reg_kw), training=TrainConfig.preset(preset, **train_kw), **top_kw)

    @classmethod
    def from_file(cls, path, preset: Optional[str] = None, seed: Optional[int] = None) -> "ExperimentSpec":
        return cls.from_kv(parse_kv_text(Path(path).read_text(encoding="utf-8")), preset, seed)


# -- evaluation -----------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    iteration: int
    report: MetricReport


@dataclass
class Evaluation:
    report: MetricReport
    frames: list  # (sequence name, FramePair)
    guard_events: int = 0


TrackerSource = Union[Tracker, Callable[[Sequence], Tracker]]


def track_sequence(tracker: Tracker, seq: Sequence) -> tuple[list[FramePair], int]:
    """Scored frame pairs (annotated frames after the initial one) and guard count."""
    idx = seq.annotated_indices()
    if not idx:
        return [], 0
    i0 = idx[0]
    state = tracker.init(seq.frames[i0], seq.gt_box(i0))
    preds = {}
    for i in range(i0 + 1, len(seq.frames)):
        state, box = tracker.step(state, seq.frames[i])
        preds[i] = box
    pairs = [FramePair(i, seq.gt_box(i), preds[i]) for i in idx[1:]]
    return pairs, state.extra.get("guard_count", 0)


def evaluate_tracker(source: TrackerSource, corpus: list[Sequence],
                     threshold: float = DEFAULT_THRESHOLD) -> Evaluation:
    if not corpus:
        raise ValidationError("empty test corpus")
    frames, guards = [], 0
    for seq in corpus:
        tracker = source if isinstance(source, Tracker) else source(seq)
        pairs, g = track_sequence(tracker, seq)
        frames += [(seq.name, p) for p in pairs]
        guards += g
    return Evaluation(aggregate([p for _, p in frames], threshold), frames, guards)


def evaluate_checkpoint(ckpt: Checkpoint, corpus: list[Sequence], threshold: float = DEFAULT_THRESHOLD,
                        expected: Optional[RegNetConfig] = None) -> MetricReport:
    return evaluate_checkpoint_full(ckpt, corpus, threshold, expected).report


def evaluate_checkpoint_full(ckpt: Checkpoint, corpus, threshold=DEFAULT_THRESHOLD,
                             expected: Optional[RegNetConfig] = None) -> Evaluation:
    if expected is not None and ckpt.config != expected:
        raise ValidationError(f"checkpoint config {ckpt.config} does not match {expected}")
    return evaluate_tracker(RegNetTracker.from_checkpoint(ckpt), corpus, threshold)


def sweep(checkpoints, corpus, threshold: float = DEFAULT_THRESHOLD) -> list[SweepRow]:
    """One row per checkpoint, ordered by iteration. Accepts checkpoints or paths."""
    loaded = [c if isinstance(c, Checkpoint) else ckpt_io.load(c) for c in checkpoints]
    if not loaded:
        raise ValidationError("sweep needs at least one checkpoint")
    loaded.sort(key=lambda c: c.iteration)
    its = [c.iteration for c in loaded]
    if len(set(its)) != len(its):
        raise ValidationError(f"duplicate checkpoint iterations in {its}")
    return [SweepRow(c.iteration, evaluate_checkpoint(c, corpus, threshold)) for c in loaded]


def format_sweep_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow([r.iteration, *(repr(float(v)) for v in r.report.values())])
    return buf.getvalue()


def write_sweep_csv(path, rows: list[SweepRow]):
    Path(path).write_text(format_sweep_csv(rows), encoding="utf-8")


def read_sweep_csv(path) -> list[SweepRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != SWEEP_HEADER:
            raise ValidationError(f"unexpected sweep header {header}")
        rows = []
        for rec in reader:
            vals = [float(v) for v in rec[1:]]
            rows.append(SweepRow(int(rec[0]), MetricReport(*vals, frames_evaluated=0)))
    return rows


def report_table(rows: dict) -> str:
    """Delimited table, one line per model in input order, values to 4 decimals."""
    if not rows:
        raise ValidationError("report table needs at least one row")
    lines = [", ".join(TABLE_COLUMNS)]
    for name, rep in rows.items():
        lines.append(", ".join([name, *(f"{v:.4f}" for v in rep.values())]))
    return "\n".join(lines) + "\n"


def write_diagnostics(path, ev: Evaluation):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence", "frame", "gt_x1", "gt_y1", "gt_x2", "gt_y2",
                    "pred_x1", "pred_y1", "pred_x2", "pred_y2", "iou", "iogt", "atb"])
        for name, p in ev.frames:
            w.writerow([name, p.frame_index, *p.gt.as_tuple(), *p.pred.as_tuple(),
                        repr(iou(p.gt, p.pred)), repr(iogt(p.gt, p.pred)), repr(atb(p.gt, p.pred))])


# -- full run -------------------------------------------------------------

@dataclass
class ExperimentResult:
    out_dir: Path
    checkpoints: list
    rows: list
    final: Optional[MetricReport]
    baseline: Optional[MetricReport]
    error: Optional[str] = None


def run_experiment(spec: ExperimentSpec, out_dir, make_plots: bool = True) -> ExperimentResult:
    """Train, checkpoint, sweep and write every artifact under ``out_dir``.

    Artifacts: ``checkpoints/``, ``sweep.csv``, ``figures/*.svg``, ``table.txt``,
    ``diagnostics.csv`` (final checkpoint, per scored frame), ``status.json``.
    A diverged run keeps whatever checkpoints were written and records the error.
    """
    out = Path(out_dir)
    types = MODEL_EVENT_TYPES[spec.model_name]
    test_corpus = resolve_corpus(spec.test, types)
    if not test_corpus:
        raise ValidationError(f"test selector {spec.test!r} resolved to no sequences")
    train_corpus = resolve_corpus(spec.train, types)
    if not train_corpus:
        raise ValidationError(f"train selector {spec.train!r} resolved to no sequences")

    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    for stale in ckpt_dir.glob("*.rgnt"):
        stale.unlink()
    saved: list[Checkpoint] = []

    def keep(c: Checkpoint):
        ckpt_io.save(ckpt_dir / ckpt_io.checkpoint_name(c.iteration), c)
        saved.append(c)

    error = None
    try:
        train(train_corpus, spec.regnet, spec.training, on_checkpoint=keep)
    except DivergedError as exc:
        error = str(exc)
        log.error("training diverged: %s", exc)

    rows = sweep(saved, test_corpus, spec.threshold) if saved else []
    write_sweep_csv(out / "sweep.csv", rows)
    if make_plots and rows:
        from .plotting import plot_sweep

        plot_sweep(rows, out / "figures", spec.model_name)

    final = baseline = None
    if saved:
        ev = evaluate_checkpoint_full(saved[-1], test_corpus, spec.threshold)
        final = ev.report
        write_diagnostics(out / "diagnostics.csv", ev)
    baseline = evaluate_tracker(StaticTracker(), test_corpus, spec.threshold).report
    table_rows = {}
    if final is not None:
        table_rows[spec.model_name] = final
    table_rows["static"] = baseline
    (out / "table.txt").write_text(report_table(table_rows), encoding="utf-8")
    status = {"model_name": spec.model_name, "checkpoints": [c.iteration for c in saved],
              "error": error, "final": None if final is None else final.to_dict(),
              "baseline": baseline.to_dict()}
    (out / "status.json").write_text(json.dumps(status, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return ExperimentResult(out, saved, rows, final, baseline, error)
