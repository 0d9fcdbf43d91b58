"""Command-line entry point: ``solartrack <subcommand>``.

Exit codes: 0 success, 1 validation error, 2 runtime or divergence error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ParseError, SolarTrackError, ValidationError

log = logging.getLogger("solartrack")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

DEMO_QUERIES = ("AR,2014-01-01T00:00:00,2014-02-01T00:00:00", "CH,2018-01-01T00:00:00,2018-02-01T00:00:00")


def _query(text: str):
    from .dataset import parse_time
    from .ingest import HekQuery

    parts = text.split(",")
    if len(parts) != 3:
        raise ValidationError(f"query must be TYPE,START,END, got {text!r}")
    try:
        return HekQuery(parts[0].strip(), parse_time(parts[1].strip()), parse_time(parts[2].strip()))
    except ValueError as exc:
        raise ValidationError(f"bad query {text!r}: {exc}") from None


def _client(args):
    from .ingest import DEMO_FIXTURES, FetchPolicy, HttpTransport, IngestClient, LiveConfig

    if args.live_config:
        cfg = LiveConfig.from_file(args.live_config)
        policy = FetchPolicy()
        return IngestClient(HttpTransport(cfg, policy), policy)
    return IngestClient.from_fixtures(Path(args.fixtures or DEMO_FIXTURES))


def _spec(args):
    from .harness import ExperimentSpec

    if args.spec:
        return ExperimentSpec.from_file(args.spec, preset=args.preset, seed=args.seed)
    return ExperimentSpec.from_kv({}, preset=args.preset, seed=args.seed)


def cmd_synth(args):
    from .synthgen import SynthConfig, generate_corpus, write_corpus

    tmpl = SynthConfig(image_size=args.image_size, n_frames=args.n_frames, drift=args.drift,
                       annotate_every=args.annotate_every,
                       event_kind="bright" if args.kind == "mixed" else args.kind)
    corpus = generate_corpus(args.n, tmpl, args.seed, mix_kinds=args.kind == "mixed")
    paths = write_corpus(args.out, corpus)
    print(f"wrote {len(paths)} sequences to {args.out}")


def cmd_ingest(args):
    from .dataset import write_chain_file, write_event_csv

    client = _client(args)
    queries = [_query(q) for q in (args.query or DEMO_QUERIES)]
    records = [r for q in queries for r in client.query_events(q)]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_event_csv(out / "events.csv", records)
    chains: dict = {}
    for r in records:
        if r.chain_code is not None:
            chains.setdefault(r.event_id, {})[r.start_time] = r.chain_code
    for eid, c in chains.items():
        write_chain_file(out / f"{eid}.chain", c)
    print(f"{len(records)} records -> {out / 'events.csv'}")


def cmd_build_dataset(args):
    from .builder import build_dataset

    client = _client(args)
    queries = [_query(q) for q in (args.query or DEMO_QUERIES)]
    report = build_dataset(client, queries, args.out, args.label_mode)
    print(json.dumps(report.to_dict(), indent=1, sort_keys=True))


def cmd_train(args):
    from .harness import MODEL_EVENT_TYPES, resolve_corpus
    from .regnet import checkpoint as ckpt_io
    from .regnet.training import train

    spec = _spec(args)
    corpus = resolve_corpus(spec.train, MODEL_EVENT_TYPES[spec.model_name])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train(corpus, spec.regnet, spec.training,
          on_checkpoint=lambda c: ckpt_io.save(out / ckpt_io.checkpoint_name(c.iteration), c))
    print(f"checkpoints in {out}")


def cmd_eval(args):
    from .harness import MODEL_EVENT_TYPES, report_table, resolve_corpus, sweep, write_sweep_csv
    from .plotting import plot_sweep

    spec = _spec(args)
    threshold = args.threshold if args.threshold is not None else spec.threshold
    corpus = resolve_corpus(args.test or spec.test, MODEL_EVENT_TYPES[spec.model_name])
    if not corpus:
        raise ValidationError("test selector resolved to no sequences")
    paths = []
    for p in args.checkpoints:
        p = Path(p)
        paths += sorted(p.glob("*.rgnt")) if p.is_dir() else [p]
    if not paths:
        raise ValidationError("no checkpoints given")
    rows = sweep(paths, corpus, threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(out / "sweep.csv", rows)
    plot_sweep(rows, out / "figures", spec.model_name)
    final = rows[-1].report
    (out / "metrics.json").write_text(json.dumps({spec.model_name: final.to_dict()}, indent=1) + "\n")
    print(report_table({spec.model_name: final}), end="")


def cmd_report(args):
    from .harness import report_table
    from .metrics import MetricReport

    rows = {}
    for p in args.metrics:
        data = json.loads(Path(p).read_text(encoding="utf-8"))
        for name, d in data.items():
            rows[name] = MetricReport.from_dict(d)
    text = report_table(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")


def cmd_run(args):
    from .harness import run_experiment

    result = run_experiment(_spec(args), args.out, make_plots=not args.no_plots)
    print((Path(args.out) / "table.txt").read_text(), end="")
    if result.error:
        raise SolarTrackError(f"training diverged: {result.error}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="solartrack", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, spec=True):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        if spec:
            sp.add_argument("--spec", help="experiment spec (key = value lines)")
            sp.add_argument("--preset", choices=("paper", "desk"), default=None)
            sp.add_argument("--threshold", type=float, default=None)

    def source(sp):
        sp.add_argument("--fixtures", help="fixture directory (default: bundled demo fixtures)")
        sp.add_argument("--live-config", help="live endpoint config file; disables fixture mode")
        sp.add_argument("--query", action="append", help="TYPE,START,END (repeatable); defaults to the demo queries")

    sp = sub.add_parser("synth", help="write synthetic event directories")
    common(sp, spec=False)
    sp.add_argument("--n", type=int, default=1)
    sp.add_argument("--kind", choices=("bright", "dark", "mixed"), default="mixed")
    sp.add_argument("--image-size", type=int, default=128)
    sp.add_argument("--n-frames", type=int, default=40)
    sp.add_argument("--drift", type=float, default=1.0)
    sp.add_argument("--annotate-every", type=int, default=5)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("ingest", help="query HEK and write the event CSV")
    common(sp, spec=False)
    source(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("build-dataset", help="build event directories from HEK + Helioviewer")
    common(sp, spec=False)
    source(sp)
    sp.add_argument("--label-mode", choices=("hek_box", "chain_inscribed"), default="hek_box")
    sp.set_defaults(func=cmd_build_dataset)

    sp = sub.add_parser("train", help="train a model and write checkpoints")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="sweep checkpoints over a test corpus")
    common(sp)
    sp.add_argument("checkpoints", nargs="+", help="checkpoint files or directories")
    sp.add_argument("--test", help="test corpus selector (overrides the spec)")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", help="render the metric table from metrics.json files")
    sp.add_argument("metrics", nargs="+")
    sp.add_argument("--out", help="also write the table here")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("run", help="train, sweep and tabulate in one go")
    common(sp)
    sp.add_argument("--no-plots", action="store_true")
    sp.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse signals bad usage with 2; here that is a validation failure
        if exc.code not in (0, None):
            return EXIT_VALIDATION
        raise
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValidationError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolarTrackError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
