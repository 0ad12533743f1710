"""
Command-line interface.

Subcommands: ``features``, ``train``, ``score``, ``eer``, ``fuse-fit``,
``fuse-apply`` and ``heatmap``.  Exit codes: 0 success, 1 data error, 2 usage
error (bad arguments, missing input paths, invalid configuration).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import heatmap_io as hm
from .config import ConfigError, load_config
from .errors import DataError
from .features import extract, read_feature, read_wav, write_feature
from .model import build_model, heatmap, load_checkpoint, predict, save_checkpoint
from .scoring import FusionModel, ScoreSet, apply_fusion, compute_eer, fit_fusion
from .trainer import load_dataset, train
from .tsv import (
    UNKNOWN_LABEL,
    ManifestEntry,
    read_key,
    read_manifest,
    read_scores,
    write_manifest,
    write_scores,
)

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2

logger = logging.getLogger("afnet")


class UsageError(Exception):
    pass


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise argparse.ArgumentTypeError(f"no such file or directory: {path}")
    return p


def _config(args):
    return load_config(args.config, seed=getattr(args, "seed", None),
                       target_T=getattr(args, "target_T", None))


# ---------------------------------------------------------------------------
# subcommands


def cmd_features(args) -> int:
    cfg = _config(args)
    key = read_key(args.key) if args.key else {}
    names = {1: "genuine", 0: "spoof"}
    if args.wav_dir is not None:
        if not args.wav_dir.is_dir():
            raise UsageError(f"{args.wav_dir} is not a directory")
        inputs = [ManifestEntry(p.stem, str(p), names[key[p.stem]] if p.stem in key else UNKNOWN_LABEL)
                  for p in sorted(args.wav_dir.glob("*.wav"))]
    else:
        inputs = read_manifest(args.manifest)
    out_dir = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    written, failed = [], []
    for e in inputs:
        try:
            fmap = extract(read_wav(e.path), e.utt_id, cfg.target_T)
        except DataError as exc:
            failed.append((e.utt_id, str(exc)))
            continue
        write_feature(out_dir / f"{e.utt_id}.afnf", fmap)
        written.append(ManifestEntry(e.utt_id, f"{e.utt_id}.afnf", e.label))
    write_manifest(out_dir / "manifest.tsv", written)
    print(f"wrote {len(written)} feature files to {out_dir}")
    if failed:
        for utt, msg in failed:
            print(f"error: {utt}: {msg}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    train_set = load_dataset(read_manifest(args.train))
    dev_set = load_dataset(read_manifest(args.dev))
    shape = tuple(train_set.X.shape[1:])
    if tuple(dev_set.X.shape[1:]) != shape:
        raise DataError(f"train maps {shape} and dev maps {dev_set.X.shape[1:]} differ in shape")
    model = build_model(shape, cfg.af_config(), cfg.drn_config(), seed=cfg.seed)
    out_dir = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(model, train_set, dev_set, cfg.train_config(), checkpoint_dir=out_dir)
    best_path = out_dir / "best.afnc"
    save_checkpoint(result.best, best_path)
    with open(out_dir / "train_log.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for r in result.records:
            fh.write(f"{r.epoch}\t{r.train_loss!r}\t{r.dev_eer!r}\t{Path(r.checkpoint).name}\n")
    print(f"best epoch {result.best_epoch} (dev EER {result.records[result.best_epoch - 1].dev_eer:.6f}) -> {best_path}")
    return EXIT_OK


def cmd_score(args) -> int:
    model = load_checkpoint(args.checkpoint)
    data = load_dataset(read_manifest(args.manifest), require_labels=False)
    if len(data) and tuple(data.X.shape[1:]) != tuple(model.input_shape):
        raise DataError(f"feature maps {data.X.shape[1:]} do not match model input {tuple(model.input_shape)}")
    scores = predict(model, data.X) if len(data) else np.zeros(0)
    write_scores(args.out, ScoreSet(data.ids, scores.astype(np.float64)))
    return EXIT_OK


def _labelled(scores: ScoreSet, key_path) -> ScoreSet:
    return scores.with_labels(read_key(key_path))


def cmd_eer(args) -> int:
    s = _labelled(read_scores(args.scores), args.key)
    eer, thr = compute_eer(s.scores, s.labels)
    print(f"EER {eer:.6f} ({100 * eer:.2f}%) threshold {thr!r}")
    return EXIT_OK


def cmd_fuse_fit(args) -> int:
    sets = [read_scores(p) for p in args.scores]
    ids = sets[0].ids
    sets = [s.aligned_to(ids) for s in sets]
    labelled = _labelled(sets[0], args.key)
    model = fit_fusion(sets, labelled.labels)
    Path(args.out).write_text(json.dumps(model.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"weights {[float(w) for w in model.weights]} bias {model.bias!r}")
    return EXIT_OK


def cmd_fuse_apply(args) -> int:
    try:
        model = FusionModel.from_dict(json.loads(Path(args.model).read_text(encoding="utf-8")))
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.model}: not JSON ({exc})") from exc
    sets = [read_scores(p) for p in args.scores]
    write_scores(args.out, apply_fusion(sets, model))
    return EXIT_OK


def cmd_heatmap(args) -> int:
    model = load_checkpoint(args.checkpoint)
    fmap = read_feature(args.features)
    A = heatmap(model, fmap.data)
    prefix = str(args.out)
    hm.write_pgm(prefix + ".pgm", A)
    hm.write_csv(prefix + ".csv", A)
    print(f"wrote {prefix}.pgm and {prefix}.csv ({A.shape[0]}x{A.shape[1]})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afnet", description="Attentive filtering network for replay detection")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", type=_existing, help="key=value configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--target-T", dest="target_T", type=int)

    p = sub.add_parser("features", help="WAV files -> unified log-spectrogram maps")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--wav-dir", type=_existing)
    src.add_argument("--manifest", type=_existing, help="utt_id<TAB>wav_path<TAB>label")
    p.add_argument("--key", type=_existing, help="labels for --wav-dir input")
    p.add_argument("--out-dir", type=Path, required=True)
    with_config(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a model with dev-EER model selection")
    p.add_argument("--train", type=_existing, required=True)
    p.add_argument("--dev", type=_existing, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    with_config(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a feature manifest with a checkpoint")
    p.add_argument("--checkpoint", type=_existing, required=True)
    p.add_argument("--manifest", type=_existing, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eer", help="equal error rate of a score file")
    p.add_argument("--scores", type=_existing, required=True)
    p.add_argument("--key", type=_existing, required=True)
    p.set_defaults(func=cmd_eer)

    p = sub.add_parser("fuse-fit", help="fit z-norm + logistic-regression fusion on dev scores")
    p.add_argument("--scores", type=_existing, nargs="+", required=True)
    p.add_argument("--key", type=_existing, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_fuse_fit)

    p = sub.add_parser("fuse-apply", help="apply a fusion model to score files")
    p.add_argument("--model", type=_existing, required=True)
    p.add_argument("--scores", type=_existing, nargs="+", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_fuse_apply)

    p = sub.add_parser("heatmap", help="export the attention heatmap of one utterance")
    p.add_argument("--checkpoint", type=_existing, required=True)
    p.add_argument("--features", type=_existing, required=True)
    p.add_argument("--out", type=Path, required=True, help="output prefix (.pgm and .csv are appended)")
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
