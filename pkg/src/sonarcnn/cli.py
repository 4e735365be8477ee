"""Command-line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
The default output directory is taken from ``SONARCNN_OUTPUT_DIR`` (falling
back to ``./runs``) unless the config or ``--out`` says otherwise.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path
from typing import List, Optional, Tuple

from .config import ConfigError, RunConfig, dump_config, load_config

OUTPUT_ENV = "SONARCNN_OUTPUT_DIR"
CHECKPOINT = "model.sonarcnn"


class UsageError(Exception):
    pass


def _int_list(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _output_dir(args, cfg: Optional[RunConfig] = None) -> Path:
    if getattr(args, "out", None):
        out = Path(args.out)
    elif cfg is not None and cfg.output_dir:
        out = Path(cfg.output_dir)
    else:
        out = Path(os.environ.get(OUTPUT_ENV, "runs"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_bytes(text.encode("utf-8"))


def _load_cfg(args) -> Tuple[RunConfig, Path]:
    cfg = load_config(args.config)
    out = _output_dir(args, cfg)
    cfg = dataclasses.replace(cfg, output_dir=str(out))
    _write(out / "resolved_config.json", dump_config(cfg))
    return cfg, out


def _dataset(cfg: RunConfig):
    from .data import DatasetError, load_dataset, sequential_split, synth_generate

    d = cfg.dataset
    if d.synthetic is not None:
        s = d.synthetic
        ds = synth_generate(s.classes, s.per_class, s.size, s.seed, s.objects_per_class)
    elif d.path:
        if not Path(d.path).is_dir():
            raise UsageError(f"dataset path {d.path} does not exist")
        ds = load_dataset(d.path, d.size or cfg.model.input_size)
    else:
        raise UsageError("config needs dataset.path or dataset.synthetic")
    if ds.size != cfg.model.input_size:
        raise UsageError(f"dataset images are {ds.size}px, model.input_size is {cfg.model.input_size}")
    if d.split == "none":
        return ds, ds
    try:
        return sequential_split(ds, d.train_fraction)
    except DatasetError as exc:
        raise UsageError(str(exc)) from None


def _train_config(cfg: RunConfig, epochs: Optional[int] = None):
    from .data import AugmentConfig
    from .train import TrainConfig

    t = cfg.train
    aug = None
    if t.augment is not None:
        aug = AugmentConfig(t.augment.shift_fraction, t.augment.flip_ud, t.augment.flip_lr, cfg.seed)
    return TrainConfig(t.learning_rate, t.epochs if epochs is None else epochs, t.batch_size, aug, t.pixel_mean,
                       cfg.seed, t.target_train_accuracy)


# ---------------------------------------------------------------- commands

def cmd_analyze(args) -> int:
    from .cost import cost_report
    from .graph.ir import truncate_at
    from .zoo import ArchSpec, build

    graph = build(ArchSpec(args.family, args.width, args.size, args.classes), seed=None)
    if args.truncate:
        graph = truncate_at(graph, args.truncate)
    report = cost_report(graph, args.convention)
    print(report.to_text())
    if args.csv:
        _write(Path(args.csv), report.to_csv())
    return 0


def cmd_sweep(args) -> int:
    from .cost import sweep, sweep_csv

    out = _output_dir(args)
    for size in args.sizes:
        rows = sweep(args.family, args.widths, [size], args.classes, args.convention)
        path = out / f"width-flops-{args.family}-imagesize-{size}x{size}.csv"
        _write(path, sweep_csv(rows))
        for r in rows:
            print(f"{args.family} w={r.width} s={size}: params {r.params:,} flops {r.flops:,}")
        print(f"wrote {path}")
    return 0


def cmd_synth(args) -> int:
    from .data import save_dataset, synth_generate

    ds = synth_generate(args.classes, args.per_class, args.size, args.seed, args.objects_per_class)
    out = Path(args.out) if args.out else _output_dir(args) / "synthetic"
    save_dataset(ds, out)
    print(f"wrote {len(ds)} images ({ds.num_classes} classes, {ds.size}x{ds.size}) to {out}")
    return 0


def cmd_train(args) -> int:
    from .graph.serialize import save
    from .train import evaluate_accuracy, reconstruction_mse, train_autoencoder, train_classifier
    from .zoo import ArchSpec, build

    cfg, out = _load_cfg(args)
    train, test = _dataset(cfg)
    m = cfg.model
    classes = None if m.family == "autoencoder" else (m.classes or train.num_classes)
    graph = build(ArchSpec(m.family, m.width, m.input_size, classes), seed=cfg.seed)
    tc = _train_config(cfg)
    if m.family == "autoencoder":
        graph, log = train_autoencoder(graph, train, tc)
        score = f"test reconstruction MSE {reconstruction_mse(graph, test, log.pixel_mean):.4f}"
    else:
        graph, log = train_classifier(graph, train, tc)
        score = f"test accuracy {evaluate_accuracy(graph, test, log.pixel_mean):.4f}"
    graph.meta["pixel_mean"] = log.pixel_mean
    save(graph, out / CHECKPOINT)
    _write(out / "train_log.csv", log.to_csv())
    print(f"trained {m.family} (w={m.width}, s={m.input_size}) for {len(log)} epochs; {score}")
    print(f"wrote {out / CHECKPOINT}")
    return 0


def cmd_widthsearch(args) -> int:
    import json

    from .train import width_search

    cfg, out = _load_cfg(args)
    train, _ = _dataset(cfg)
    result = width_search(cfg.model.family, cfg.search.widths, train, cfg.search.k,
                          _train_config(cfg, epochs=cfg.search.epochs), jobs=args.jobs)
    _write(out / f"width-tuning-{cfg.model.family}-results.csv", result.to_csv())
    detail = {"family": result.family, "selected_width": result.selected_width,
              "folds": {str(r.width): r.fold_accuracies for r in result.rows},
              "failures": {str(r.width): r.failures for r in result.rows if r.failures}}
    _write(out / "widthsearch.json", json.dumps(detail, indent=2, sort_keys=True) + "\n")
    for r in result.rows:
        print(f"w={r.width}: mean {r.acc_mean:.4f} std {r.acc_std:.4f} ({len(r.fold_accuracies)} folds)")
    print(f"selected width {result.selected_width}")
    return 0


def _checkpoint(cfg: RunConfig, out: Path):
    from .graph.serialize import load

    path = Path(cfg.transfer.checkpoint) if cfg.transfer.checkpoint else out / CHECKPOINT
    if not path.is_file():
        raise UsageError(f"checkpoint {path} not found")
    return load(path)


def _features(cfg: RunConfig, out: Path, raw_pixels: bool):
    from .data import compute_pixel_mean
    from .transfer import FeatureMatrix, extract_features, raw_pixel_features

    if cfg.transfer.features_dir and not raw_pixels:
        d = Path(cfg.transfer.features_dir)
        try:
            return FeatureMatrix.load(d / "features_train.npz"), FeatureMatrix.load(d / "features_test.npz")
        except FileNotFoundError as exc:
            raise UsageError(f"feature file missing: {exc.filename}") from None
    train, test = _dataset(cfg)
    if raw_pixels:
        mean = compute_pixel_mean(train) if cfg.train.pixel_mean is None else cfg.train.pixel_mean
        return raw_pixel_features(train, mean), raw_pixel_features(test, mean)
    graph = _checkpoint(cfg, out)
    layer = cfg.transfer.layer
    if not layer:
        from .zoo import FEATURE_LAYERS

        layer = FEATURE_LAYERS.get(graph.meta.get("family"), ("",))[0]
        if not layer:
            raise UsageError("transfer.layer is required for this checkpoint")
    mean = graph.meta.get("pixel_mean", compute_pixel_mean(train))
    return (extract_features(graph, layer, train, mean), extract_features(graph, layer, test, mean))


def _feature_csv(fm) -> str:
    from .csvio import format_rows

    header = ["label"] + [f"f{i}" for i in range(fm.dim)]
    return format_rows(header, [[int(l)] + [float(v) for v in row] for l, row in zip(fm.labels, fm.features)])


def cmd_extract(args) -> int:
    cfg, out = _load_cfg(args)
    train, test = _features(dataclasses.replace(cfg, transfer=dataclasses.replace(cfg.transfer, features_dir=None)),
                            out, cfg.transfer.raw_pixels)
    for name, fm in (("train", train), ("test", test)):
        fm.save(out / f"features_{name}.npz")
        _write(out / f"features_{name}.csv", _feature_csv(fm))
    print(f"extracted {train.dim} features at {train.layer!r}: {len(train.labels)} train, {len(test.labels)} test rows")
    return 0


def cmd_lowshot(args) -> int:
    from .transfer import run_lowshot

    cfg, out = _load_cfg(args)
    raw = args.raw_pixels or cfg.transfer.raw_pixels
    train, test = _features(cfg, out, raw)
    t = cfg.transfer
    curve = run_lowshot(train, test, t.spc, t.runs, cfg.seed, t.C, t.standardize, jobs=args.jobs, loss=t.svm_loss)
    tag = "raw-pixels" if raw else train.layer
    _write(out / f"lowshot-{tag}.csv", curve.to_csv())
    _write(out / f"lowshot-{tag}.json", curve.to_json())
    for s, m, sd in zip(curve.spc, curve.mean, curve.std):
        print(f"spc {s:3d}: accuracy {m:.4f} +- {sd:.4f}")
    if curve.auscc is not None:
        print(f"AUSCC {100 * curve.auscc:.2f}%")
    for spc, short in curve.shortfall.items():
        print(f"spc {spc}: classes short of samples {short}")
    return 0


def cmd_verify_anchors(args) -> int:
    from .anchors import verify_anchors

    root = args.dataset or os.environ.get("SONARCNN_TURNTABLE")
    report = verify_anchors(dataset_root=root, run_training=args.train)
    print(report.to_text())
    if args.json:
        _write(Path(args.json), report.to_json())
    return 0 if report.ok else 1


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    from .cost import CONVENTIONS, DEFAULT_CONVENTION
    from .zoo import CLASSIFIERS, FAMILIES

    p = argparse.ArgumentParser(prog="sonarcnn", description=__doc__.splitlines()[0])
    p.add_argument("--jobs", type=int, default=1, help="worker processes for width search / low-shot cells")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="parameter / FLOPs report for one architecture")
    a.add_argument("family", choices=FAMILIES)
    a.add_argument("--width", type=int, required=True)
    a.add_argument("--size", type=int, default=96)
    a.add_argument("--classes", type=int, default=12)
    a.add_argument("--convention", choices=CONVENTIONS, default=DEFAULT_CONVENTION)
    a.add_argument("--truncate", metavar="LAYER", help="cost of the model cut at LAYER (aliases accepted)")
    a.add_argument("--csv", help="also write the per-node report as CSV")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("sweep", help="FLOPs over widths and input sizes")
    s.add_argument("family", choices=FAMILIES)
    s.add_argument("--widths", type=_int_list, default=[8, 16, 32, 64])
    s.add_argument("--sizes", type=_int_list, default=[32, 48, 64, 80, 96])
    s.add_argument("--classes", type=int, default=12)
    s.add_argument("--convention", choices=CONVENTIONS, default=DEFAULT_CONVENTION)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("synth", help="write the synthetic sonar-like dataset")
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--per-class", type=int, default=10)
    g.add_argument("--size", type=int, default=32)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--objects-per-class", type=int, default=2)
    g.add_argument("--out")
    g.set_defaults(func=cmd_synth)

    for name, func, text in (("train", cmd_train, "train a model from a config file"),
                             ("widthsearch", cmd_widthsearch, "k-fold width grid search"),
                             ("extract", cmd_extract, "extract features at a named layer"),
                             ("lowshot", cmd_lowshot, "low-shot SVM protocol and AUSCC")):
        c = sub.add_parser(name, help=text)
        c.add_argument("config")
        c.add_argument("--out")
        if name == "lowshot":
            c.add_argument("--raw-pixels", action="store_true", help="use normalised pixels instead of a model layer")
        c.set_defaults(func=func)

    v = sub.add_parser("verify-anchors", help="check every reference number in the anchor manifest")
    v.add_argument("--dataset", help="turntable dataset root (enables dataset-gated anchors)")
    v.add_argument("--train", action="store_true", help="also run the long dataset training anchor")
    v.add_argument("--json")
    v.set_defaults(func=cmd_verify_anchors)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    from .graph.ir import GraphError

    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if args.command in ("analyze", "sweep", "synth") else 1
    except Exception as exc:  # runtime failure, e.g. diverged training
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
