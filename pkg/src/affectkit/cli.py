"""Command-line entry point for the full pipeline.

Subcommands: synth, train, predict, postprocess, eval, plot. Exit codes:
0 success, 2 argument/config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, config as config_mod, data as data_mod, models, \
    plot as plot_mod, postproc, trainer
from .objective import Aggregator
from .postproc import EvaluationError
from .trainer import NumericalFailure

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _parse_overrides(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise config_mod.ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        out[(section, key)] = value
    return out


def cmd_synth(args):
    data_mod.synth_corpus(args.out, args.utterances,
                          frames_range=(args.frames_min, args.frames_max),
                          side=args.side, seed=args.seed,
                          noise_std=args.noise, fmt=args.format)
    print(f"wrote {args.utterances} utterances to {args.out}/manifest.csv")
    return EXIT_OK


def cmd_train(args):
    cfg = config_mod.load_config(args.config, _parse_overrides(args.set))
    if args.seed is not None:
        cfg["train"]["seed"] = str(args.seed)
    if args.epochs is not None:
        cfg["train"]["epochs"] = str(args.epochs)
    tcfg = config_mod.train_config(cfg, checkpoint_dir=args.out)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_mod.write_effective(cfg, out_dir)
    log, best, last = trainer.train(tcfg, args.train, args.val, out_dir,
                                    log_stream=sys.stdout)
    print(f"best checkpoint: {best}")
    print(f"last checkpoint: {last}")
    return EXIT_OK


def cmd_predict(args):
    cfg = config_mod.load_config(args.config, _parse_overrides(args.set))
    spec = config_mod.arch_spec(cfg)
    seq_len = int(cfg["train"]["seq_len"])
    batch = int(cfg["train"]["batch_size"])
    net = models.build(spec)
    net.load_state_dict(checkpoint.load(args.checkpoint))
    utterances = data_mod.load_manifest(args.manifest)
    cache = data_mod.FrameCache(utterances, spec.input_side)
    tracks = trainer.predict_tracks(net, utterances, cache, seq_len, batch)
    postproc.save_tracks(args.out, tracks)
    print(f"wrote {len(tracks)} tracks to {args.out}")
    return EXIT_OK


def cmd_postprocess(args):
    cfg = config_mod.load_config(args.config, _parse_overrides(args.set))
    clamp = config_mod.clamp_ranges(cfg)
    tracks = postproc.load_tracks(args.tracks)
    agg = Aggregator(args.agg)
    if args.gold:
        gold = data_mod.load_manifest(args.gold)
        frame_counts = {u.id: u.n_frames for u in gold}
        for t in tracks:
            if t.utterance_id not in frame_counts:
                raise EvaluationError(f"track {t.utterance_id!r} not in gold manifest")
        preds, applied = postproc.run_pipeline(
            tracks, gold, agg, args.window_valence, args.window_arousal,
            args.min_frames, args.alpha, clamp, keep_if_improved=True)
        print(f"applied steps: {applied}")
    else:
        filtered = [postproc.filter_track(t, args.window_valence, args.window_arousal)
                    for t in tracks]
        preds = [postproc.utterance_score(t, agg, clamp) for t in filtered]
        preds = postproc.smooth_short_utterances(preds, args.min_frames, args.alpha)
    postproc.save_predictions(args.out, preds)
    print(f"wrote {len(preds)} predictions to {args.out}")
    return EXIT_OK


def cmd_eval(args):
    preds = postproc.load_predictions(args.preds)
    gold = data_mod.load_manifest(args.gold)
    report = postproc.evaluate(preds, gold)
    for k, v in report.items():
        print(f"{k}={v}")
    if args.out:
        base = Path(args.out)
        postproc.save_report(base.with_suffix(".txt"), base.with_suffix(".json"),
                             report)
    return EXIT_OK


def cmd_plot(args):
    with open(args.log, encoding="utf-8") as f:
        steps, epochs = plot_mod.parse_log_lines(f.readlines())
    if not steps and not epochs:
        raise EvaluationError(f"empty log: {args.log}")
    scatter = None
    if args.preds and args.gold:
        preds = postproc.load_predictions(args.preds)
        gold = data_mod.load_manifest(args.gold)
        by_id = {p.utterance_id: p for p in preds}
        scatter = {
            "valence": [(u.valence, by_id[u.id].valence) for u in gold
                        if u.id in by_id],
            "arousal": [(u.arousal, by_id[u.id].arousal) for u in gold
                        if u.id in by_id],
        }
    svg = plot_mod.render_report(steps, epochs, scatter)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(svg)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="affectkit",
        description="CNN-RNN valence/arousal pipeline: synthesize data, train, "
                    "predict, post-process, evaluate, plot.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--utterances", type=int, default=16,
                   help="number of utterances (default 16)")
    p.add_argument("--side", type=int, default=32, help="frame side (default 32)")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("--frames-min", type=int, default=20,
                   help="min frames per utterance (default 20)")
    p.add_argument("--frames-max", type=int, default=60,
                   help="max frames per utterance (default 60)")
    p.add_argument("--noise", type=float, default=0.0,
                   help="pixel noise stddev (default 0)")
    p.add_argument("--format", choices=("bin", "png"), default="bin",
                   help="frame storage format (default bin)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", default=None, help="config file (key=value sections)")
    p.add_argument("--train", required=True, help="training manifest")
    p.add_argument("--val", required=True, help="validation manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.add_argument("--epochs", type=int, default=None, help="override train.epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="emit per-frame prediction tracks")
    p.add_argument("--checkpoint", required=True, help="parameter checkpoint")
    p.add_argument("--manifest", required=True, help="utterance manifest")
    p.add_argument("--config", default=None, help="config file for the architecture")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("--out", required=True, help="output tracks file")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("postprocess", help="filter, aggregate and smooth tracks")
    p.add_argument("--tracks", required=True, help="tracks file from predict")
    p.add_argument("--window-valence", type=int, default=postproc.DEFAULT_WINDOW_VALENCE,
                   help=f"valence median window (default {postproc.DEFAULT_WINDOW_VALENCE})")
    p.add_argument("--window-arousal", type=int, default=postproc.DEFAULT_WINDOW_AROUSAL,
                   help=f"arousal median window (default {postproc.DEFAULT_WINDOW_AROUSAL})")
    p.add_argument("--agg", choices=("mean", "median"), default="median",
                   help="frame aggregator (default median)")
    p.add_argument("--min-frames", type=int, default=postproc.DEFAULT_MIN_FRAMES,
                   help=f"smoothing threshold (default {postproc.DEFAULT_MIN_FRAMES})")
    p.add_argument("--alpha", type=float, default=postproc.DEFAULT_ALPHA,
                   help=f"smoothing blend weight (default {postproc.DEFAULT_ALPHA})")
    p.add_argument("--gold", default=None,
                   help="gold manifest; enables keep-if-improved selection")
    p.add_argument("--config", default=None, help="config file for clamp ranges")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("--out", required=True, help="output predictions CSV")
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("eval", help="CCC report for predictions vs gold")
    p.add_argument("--preds", required=True, help="predictions CSV")
    p.add_argument("--gold", required=True, help="gold manifest")
    p.add_argument("--out", default=None,
                   help="report base path (writes .txt and .json)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render training curves (and scatter) as SVG")
    p.add_argument("--log", required=True, help="train.log file")
    p.add_argument("--out", required=True, help="output SVG path")
    p.add_argument("--preds", default=None, help="predictions CSV for scatter")
    p.add_argument("--gold", default=None, help="gold manifest for scatter")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except config_mod.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        if isinstance(e, (data_mod.ManifestError, EvaluationError,
                          checkpoint.CheckpointError)):
            print(f"data error: {e}", file=sys.stderr)
            return EXIT_DATA
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
