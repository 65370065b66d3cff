"""Command line entry point: ``statfusion <subcommand> ...``.

Failures print one line ``error <Code>: <message>`` on stderr and exit with
2 (input error) or 3 (numerical failure).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .errors import InputError, StatFusionError
from .pipeline import atomic_write, load_config


def _add_common(p, features=True, cnn=False):
    p.add_argument("--manifest", required=True, help="CSV: image_id,path,label[,split]")
    if features:
        p.add_argument("--features", help="features CSV from `extract`; extracted on the fly when omitted")
    if cnn:
        p.add_argument("--cnn-probs", required=True, help="CSV: image_id,<label_0>,...")
    p.add_argument("--config", help="JSON run configuration (defaults when omitted)")
    p.add_argument("--out", required=True)


def build_parser():
    parser = argparse.ArgumentParser(prog="statfusion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="write the 54-indicator features CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--no-resize", action="store_true", help="extract from the original resolution")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-features", help="train the indicator classifier")
    _add_common(p)

    p = sub.add_parser("fuse", help="train the fusion classifiers")
    _add_common(p, cnn=True)

    p = sub.add_parser("evaluate", help="score every method over the seed list")
    _add_common(p, cnn=True)

    p = sub.add_parser("ablate", help="leave-one-family-out ablation grid")
    _add_common(p, cnn=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", help="JSON synthetic spec (defaults when omitted)")
    p.add_argument("--out", required=True)
    return parser


def _run(args):
    if args.command == "synth":
        spec = json.loads(Path(args.spec).read_text(encoding="utf-8")) if args.spec else {}
        data = pipeline.generate_synthetic(pipeline.SynthSpec.from_dict(spec))
        pipeline.write_synthetic(data, args.out)
        print(f"wrote {len(data.images)} images to {args.out}")
        return

    config = load_config(args.config)
    if args.command == "extract":
        if args.no_resize:
            config.resize = False
        X, seconds = pipeline.run_extract(args.manifest, config, args.out)
        print(f"extracted {X.shape[0]} images in {seconds:.2f}s -> {args.out}")
    elif args.command == "train-features":
        _, metrics = pipeline.run_train_features(args.manifest, args.features, config, args.out)
        for split, wp in metrics.items():
            print(f"{split}\tweighted_precision={wp:.4f}")
    elif args.command == "fuse":
        _, fusion = pipeline.run_fuse(args.manifest, args.features, args.cnn_probs, config, args.out)
        print(f"trained fusion kinds {', '.join(fusion)} -> {args.out}")
    elif args.command == "evaluate":
        report = pipeline.run_evaluate(args.manifest, args.features, args.cnn_probs, config)
        out = Path(args.out)
        # timings vary run to run; keep them out of the canonical report
        atomic_write(out, report.to_json(include_timing=False))
        atomic_write(out.with_suffix(".timing.json"), json.dumps(report.timing.to_dict(), indent=2) + "\n")
        atomic_write(out.with_suffix(".txt"), report.to_text())
        sys.stdout.write(report.to_text())
    elif args.command == "ablate":
        grid = pipeline.run_ablate(args.manifest, args.features, args.cnn_probs, config)
        atomic_write(args.out, grid.to_csv())
        sys.stdout.write(grid.to_csv())


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _run(args)
    except StatFusionError as exc:
        msg = " ".join(str(exc).split())
        print(f"error {exc.code}: {msg}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error FileNotFound: {exc.filename}", file=sys.stderr)
        return InputError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
