"""``aucorr`` command line: synth, train, eval, gradcheck.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
Verbosity comes from ``AUCORR_LOG`` (a logging level name, default WARNING).
"""
import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from aucorr.config import load_config, parse_implications
from aucorr.data import (ClipDataset, DataInputError, DatasetManifest, LabelParseError,
                         load_labels)
from aucorr.nn import ConfigError
from aucorr.train import STAGES, evaluate, load_model, run_stage, stage_kind

log = logging.getLogger("aucorr")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="INI config file; flags override it")
    common.add_argument("--seed", type=int, default=0)

    parser = _Parser(prog="aucorr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", type=Path, required=True, help="dataset directory")
    p.add_argument("--frames", type=int, help="total frames across all videos")

    p = sub.add_parser("train", parents=[common], help="train one stage or all four")
    p.add_argument("--data", type=Path, required=True, help="dataset directory or manifest.json")
    p.add_argument("--out", type=Path, required=True, help="run directory")
    p.add_argument("--stage", choices=STAGES + ("all",), default="all")
    p.add_argument("--no-correlation", action="store_true")
    p.add_argument("--no-audio", action="store_true", help="joint stage without the audio branch")

    p = sub.add_parser("eval", parents=[common], help="per-AU and macro F1 of a checkpoint")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="run directory holding checkpoints/")
    p.add_argument("--stage", choices=STAGES, default="joint")
    p.add_argument("--split", default="val", help="manifest split; 'all' uses every video")
    p.add_argument("--threshold", type=float)
    p.add_argument("--no-correlation", action="store_true")
    p.add_argument("--no-audio", action="store_true")
    p.add_argument("--report", type=Path, help="report path (default <out>/report_<stage>.json)")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference checks")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--ops-only", action="store_true", help="skip the composite model paths")
    return parser


def _config(args):
    cfg = load_config(args.config)
    if getattr(args, "frames", None) is not None:
        cfg.synth.frames = args.frames
    cfg.validate()
    return cfg


def _manifest(path, cfg):
    manifest = DatasetManifest.load(path)
    if manifest.num_aus != cfg.head.num_aus:
        raise ConfigError(f"dataset has {manifest.num_aus} AUs, config head.num_aus is "
                          f"{cfg.head.num_aus}")
    return manifest


def _split(manifest, name):
    if name == "all" or not manifest.split(name):
        return None
    return name


def label_stats(manifest, cfg):
    """Per-AU positive rate and P(b | a) for each implication rule, from the CSVs."""
    labels = np.concatenate([load_labels(manifest.root / v.labels, manifest.num_aus)
                             for v in manifest.videos])
    rates = (labels == 1).mean(axis=0)
    cond = []
    for a, b, _ in parse_implications(cfg.synth.implications, cfg.synth.num_aus):
        on = labels[:, a] == 1
        cond.append((a, b, float((labels[on, b] == 1).mean()) if on.any() else float("nan")))
    return labels.shape[0], rates, cond


def cmd_synth(args):
    from aucorr.synth import gen_synthetic_dataset
    cfg = _config(args)
    manifest = gen_synthetic_dataset(cfg.synth, args.out, args.seed)
    n, rates, cond = label_stats(manifest, cfg)
    print(f"manifest: {manifest.root / 'manifest.json'}")
    print(f"frames: {n}  videos: {len(manifest.videos)}")
    names = cfg.head.au_names
    print("rates: " + " ".join(f"{names[j]}={r:.3f}" for j, r in enumerate(rates)))
    for a, b, p in cond:
        print(f"P({names[b]} | {names[a]}) = {p:.3f}")
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    manifest = _manifest(args.data, cfg)
    dataset = ClipDataset(manifest, cfg.visual, cfg.audio, split=_split(manifest, "train"))
    args.out.mkdir(parents=True, exist_ok=True)
    metrics = args.out / "metrics.csv"
    stages = STAGES if args.stage == "all" else (args.stage,)
    if args.stage == "all":
        metrics.write_text("", encoding="utf-8")
    use_corr = False if args.no_correlation else None
    for stage in stages:
        t0 = time.time()
        result = run_stage(stage, cfg, dataset, args.out, args.seed, use_correlation=use_corr,
                           use_audio=not args.no_audio, metrics_path=metrics)
        print(f"{stage}: {len(result.losses)} steps, final loss {result.losses[-1]:.6f}, "
              f"{time.time() - t0:.1f}s -> {result.checkpoint}")
    return EXIT_OK


def cmd_eval(args):
    cfg = _config(args)
    manifest = _manifest(args.data, cfg)
    model, meta = load_model(cfg, args.out, args.stage, args.seed)
    dataset = ClipDataset(manifest, cfg.visual, cfg.audio, split=_split(manifest, args.split))
    threshold = cfg.train.threshold if args.threshold is None else args.threshold
    use_corr = False if args.no_correlation else meta.get("use_correlation")
    kind = stage_kind(args.stage, use_audio=not args.no_audio)
    report = evaluate(model, dataset, kind, threshold, use_corr, cfg.head.au_names)
    path = args.report or args.out / f"report_{args.stage}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_text(), encoding="utf-8")
    print(report.table())
    print(f"report: {path}")
    return EXIT_OK


def cmd_gradcheck(args):
    from aucorr.gradcheck import format_table, run_suite
    t0 = time.time()
    results = run_suite(tol=args.tol, seed=args.seed, include_models=not args.ops_only)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed in {time.time() - t0:.1f}s")
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck}


def main(argv=None):
    level = os.environ.get("AUCORR_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError, LabelParseError, DataInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
