"""Command-line entry point: ``amcvit {generate,train,finetune,eval,render}``.

Exit codes: 0 success, 1 usage error, 2 runtime error. Relative output paths
are resolved under ``$AMCVIT_OUTPUT_ROOT`` when it is set.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from amcvit import dataset as ds
from amcvit.config import RunConfig, load_config
from amcvit.errors import AmcError, ConfigError, InvalidScheme, ShapeError
from amcvit.imaging import (
    compose_three_channel,
    encode_png,
    enhance_gray,
    gray_to_rgb,
    rasterize_gray,
    upscale,
)
from amcvit.metrics import confusion, report, write_confusion_csv, write_confusion_png, write_convergence_log
from amcvit.modem import ModulationScheme, scheme_names, transmit
from amcvit.rng import child_seed
from amcvit.vit import ImageSet, TrainConfig, fine_tune, init_params, load_checkpoint, predict, train

logger = logging.getLogger("amcvit")

OUTPUT_ROOT_ENV = "AMCVIT_OUTPUT_ROOT"
DEFAULTS = RunConfig()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _out_path(p) -> Path:
    p = Path(p)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p


def _fmt(values) -> str:
    return ",".join(format(float(v), "g") for v in values)


def build_parser() -> argparse.ArgumentParser:
    d = DEFAULTS
    parser = _Parser(prog="amcvit", description="Constellation-image modulation classification with a Vision Transformer.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="YAML run configuration (default: built-in defaults)")

    g = sub.add_parser("generate", help="render a labelled image dataset and its manifest")
    common(g)
    g.add_argument("--out", help=f"output directory (default: {d.dataset.output_dir})")
    g.add_argument("--seed", type=int, help=f"master seed (default: {d.dataset.master_seed})")
    g.add_argument("--schemes", type=_names, help="comma-separated schemes (default: all ten: " + ",".join(scheme_names()) + ")")
    g.add_argument("--snrs", type=_floats, help=f"comma-separated SNRs in dB (default: {_fmt(d.dataset.snrs_db)}; 11 integer SNRs of the reference setup)")
    g.add_argument("--per-class", type=int, help=f"images per scheme per SNR (default: {d.dataset.per_class}; reference setup used 1000-1100)")
    g.add_argument("--n-symbols", type=int, help=f"symbols per frame (default: {d.frame.n_symbols})")
    g.add_argument("--scale", type=float, help=f"constellation half-width (default: {d.imaging.scale}; reference value 2.5)")
    g.add_argument("--size", type=int, help=f"image width/height in pixels (default: {d.imaging.width_px}; reference value 32)")
    g.add_argument("--workers", type=int, help="worker processes, 0 = logical cores (default: 0)")

    t = sub.add_parser("train", help="train the base classifier on a generated dataset")
    common(t)
    t.add_argument("--data", required=True, help="dataset directory containing manifest.jsonl")
    t.add_argument("--out", required=True, help="checkpoint file to write")
    t.add_argument("--preset", choices=["desk", "full", "tiny"], help=f"model size (default: desk; 'full' is the 224px/16px-patch/768-dim/12-layer reference ViT)")
    t.add_argument("--epochs", type=int, help=f"training epochs (default: {d.train.epochs}; reference value 50)")
    t.add_argument("--batch-size", type=int, help=f"batch size (default: {d.train.batch_size}; reference value 128)")
    t.add_argument("--lr", type=float, help=f"Adam learning rate (default: {d.train.lr}; reference value 5e-05)")
    t.add_argument("--seed", type=int, help=f"initialization/shuffle/split seed (default: {d.train.seed})")
    t.add_argument("--val-snrs", type=_floats, help=f"validation SNRs (default: {_fmt(d.train.val_snrs_db)})")
    t.add_argument("--val-per-class", type=int, help=f"validation images per class per SNR (default: {d.train.val_per_class})")
    t.add_argument("--test-snrs", type=_floats, help=f"held-out in-distribution test SNRs (default: {_fmt(d.train.test_snrs_db)})")
    t.add_argument("--test-per-class", type=int, help=f"test images per class per SNR, 0 = none (default: {d.train.test_per_class})")

    f = sub.add_parser("finetune", help="retrain only the classification head of a checkpoint")
    common(f)
    f.add_argument("--checkpoint", required=True, help="base checkpoint")
    f.add_argument("--data", required=True, help="dataset directory containing manifest.jsonl")
    f.add_argument("--out", required=True, help="fine-tuned checkpoint file to write")
    f.add_argument("--epochs", type=int, help=f"fine-tuning epochs (default: {d.finetune.epochs}; reference value 100)")
    f.add_argument("--batch-size", type=int, help=f"batch size (default: {d.finetune.batch_size})")
    f.add_argument("--lr", type=float, help=f"Adam learning rate (default: {d.finetune.lr})")
    f.add_argument("--seed", type=int, help=f"shuffle/split seed (default: {d.finetune.seed})")
    f.add_argument("--snrs", type=_floats, help=f"fine-tuning SNRs (default: {_fmt(d.finetune.snrs_db)})")
    f.add_argument("--per-class", type=int, help=f"fine-tuning images per class per SNR (default: {d.finetune.per_class}; reference value 100)")
    f.add_argument("--val-per-class", type=int, help=f"validation images per class per SNR (default: {d.finetune.val_per_class})")

    e = sub.add_parser("eval", help="evaluate checkpoints on test manifests and write reports")
    common(e)
    e.add_argument("--checkpoint", action="append", required=True, help="checkpoint to evaluate (repeatable)")
    e.add_argument("--test", action="append", required=True, help="test manifest file (repeatable)")
    e.add_argument("--out", required=True, help="report directory")

    r = sub.add_parser("render", help="write gray, enhanced-gray and three-channel images of one frame")
    common(r)
    r.add_argument("--scheme", required=True, help="modulation scheme, one of " + ",".join(scheme_names()))
    r.add_argument("--snr", type=float, default=10.0, help="SNR in dB (default: 10)")
    r.add_argument("--seed", type=int, default=0, help="frame seed (default: 0)")
    r.add_argument("--out", default="render", help="output directory (default: render)")
    r.add_argument("--zoom", type=int, default=8, help="pixel replication factor for viewing (default: 8)")
    return parser


def _load(args) -> RunConfig:
    return load_config(args.config)


def _manifest_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_generate(args) -> int:
    cfg = _load(args)
    dsec = cfg.dataset
    if args.schemes is not None:
        dsec.schemes = args.schemes
    if args.snrs is not None:
        dsec.snrs_db = args.snrs
    if args.per_class is not None:
        dsec.per_class = args.per_class
    if args.seed is not None:
        dsec.master_seed = args.seed
    if args.workers is not None:
        dsec.workers = args.workers
    if args.n_symbols is not None:
        cfg.frame.n_symbols = args.n_symbols
    if args.scale is not None:
        cfg.imaging.scale = args.scale
    if args.size is not None:
        cfg.imaging.width_px = cfg.imaging.height_px = args.size
    out = _out_path(args.out if args.out is not None else dsec.output_dir)
    spec = cfg.dataset_spec(out)
    workers = dsec.workers or os.cpu_count() or 1
    manifest = ds.generate_dataset(spec, workers=workers)

    print(f"wrote {len(manifest.entries)} images to {out}")
    print(f"{'scheme':<8} {'snr_db':>7} {'images':>7} {'dropped':>8}")
    counts: dict = {}
    for e in manifest.entries:
        counts[(e.scheme, e.snr_db)] = counts.get((e.scheme, e.snr_db), 0) + 1
    for (scheme, snr), n in counts.items():
        print(f"{scheme:<8} {snr:>7g} {n:>7d} {manifest.dropped.get((scheme, snr), 0):>8d}")
    print(f"manifest {manifest.manifest_path} sha256 {_manifest_hash(manifest.manifest_path)}")
    return 0


def _write_split(entries, data_root: Path, path: Path) -> None:
    ds.write_manifest(ds.rebase(entries, data_root, path.parent), path)


def cmd_train(args) -> int:
    cfg = _load(args)
    tsec = cfg.train
    for attr, flag in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "lr"), ("seed", "seed"),
                       ("val_snrs_db", "val_snrs"), ("val_per_class", "val_per_class"),
                       ("test_snrs_db", "test_snrs"), ("test_per_class", "test_per_class")):
        if getattr(args, flag) is not None:
            setattr(tsec, attr, getattr(args, flag))
    if args.preset is not None:
        cfg.model.preset = args.preset
    vit = cfg.vit_config()

    data_root = Path(args.data)
    entries = ds.load_manifest(data_root / ds.MANIFEST_NAME)
    val = ds.make_split(entries, ds.SplitSpec(ds.SplitRole.VALIDATION, tuple(tsec.val_snrs_db), tsec.val_per_class), tsec.seed)
    test = []
    if tsec.test_per_class > 0:
        test = ds.make_split(entries, ds.SplitSpec(ds.SplitRole.TEST_IN, tuple(tsec.test_snrs_db), tsec.test_per_class),
                             tsec.seed, exclude=val)
    train_entries = ds.remainder(entries, val, test)
    if not train_entries:
        raise ds.InsufficientSamples("no entries left for training after drawing validation/test splits")

    out = _out_path(args.out)
    split_dir = out.with_name(out.stem + "_splits")
    _write_split(train_entries, data_root, split_dir / "base_train.jsonl")
    _write_split(val, data_root, split_dir / "validation.jsonl")
    if test:
        _write_split(test, data_root, split_dir / "test_in.jsonl")

    train_snrs = sorted({e.snr_db for e in train_entries})
    meta = {"role": "Base", "train_snrs_db": train_snrs, "n_train": len(train_entries)}
    tc = TrainConfig(tsec.epochs, tsec.batch_size, tsec.lr, seed=tsec.seed, checkpoint_path=out, meta=meta)
    ckpt = train(vit, init_params(vit, tsec.seed), ImageSet.from_manifest(train_entries, data_root, vit),
                 ImageSet.from_manifest(val, data_root, vit), tc)
    log_path = out.with_name(out.stem + "_convergence.csv")
    write_convergence_log(ckpt.history, log_path)
    print(f"trained {len(ckpt.history)} epochs on {len(train_entries)} images; checkpoint from epoch {ckpt.epoch} -> {out}")
    for rec in ckpt.history:
        print(f"  epoch {rec.epoch:>3d}  train_loss {rec.train_loss:.4f}  val_loss {rec.val_loss:.4f}  val_acc {rec.val_accuracy:.4f}")
    print(f"splits in {split_dir}; convergence log {log_path}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load(args)
    fsec = cfg.finetune
    for attr, flag in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "lr"), ("seed", "seed"),
                       ("snrs_db", "snrs"), ("per_class", "per_class"), ("val_per_class", "val_per_class")):
        if getattr(args, flag) is not None:
            setattr(fsec, attr, getattr(args, flag))
    base = load_checkpoint(args.checkpoint)
    _check_model(cfg, base.config)

    data_root = Path(args.data)
    entries = ds.load_manifest(data_root / ds.MANIFEST_NAME)
    snrs = tuple(fsec.snrs_db)
    ft = ds.make_split(entries, ds.SplitSpec(ds.SplitRole.FINETUNE_TRAIN, snrs, fsec.per_class), fsec.seed)
    val = ds.make_split(entries, ds.SplitSpec(ds.SplitRole.VALIDATION, snrs, fsec.val_per_class), fsec.seed, exclude=ft)
    rest = [e for e in ds.remainder(entries, ft, val) if any(ds.snr_millibels(e.snr_db) == ds.snr_millibels(s) for s in snrs)]

    out = _out_path(args.out)
    split_dir = out.with_name(out.stem + "_splits")
    _write_split(ft, data_root, split_dir / "finetune_train.jsonl")
    _write_split(val, data_root, split_dir / "validation.jsonl")
    if rest:
        _write_split(rest, data_root, split_dir / "test_in.jsonl")

    meta = {"role": "Fine-tuned", "train_snrs_db": sorted(float(s) for s in snrs), "n_train": len(ft)}
    tc = TrainConfig(fsec.epochs, fsec.batch_size, fsec.lr, seed=fsec.seed, checkpoint_path=out, meta=meta)
    vit = base.config
    ckpt = fine_tune(base, ImageSet.from_manifest(ft, data_root, vit), ImageSet.from_manifest(val, data_root, vit), tc)
    log_path = out.with_name(out.stem + "_convergence.csv")
    write_convergence_log(ckpt.history, log_path)
    print(f"fine-tuned head for {len(ckpt.history)} epochs on {len(ft)} images; checkpoint from epoch {ckpt.epoch} -> {out}")
    for rec in ckpt.history:
        print(f"  epoch {rec.epoch:>3d}  train_loss {rec.train_loss:.4f}  val_loss {rec.val_loss:.4f}  val_acc {rec.val_accuracy:.4f}")
    print(f"splits in {split_dir}; convergence log {log_path}")
    return 0


def _check_model(cfg: RunConfig, config) -> None:
    if cfg.model_overridden():
        wanted = cfg.vit_config()
        if wanted != config:
            raise ShapeError(f"checkpoint model {config} does not match the configured model {wanted}")


def distribution(test_snrs, train_snrs) -> str:
    """'In' when every test SNR was seen in training, else 'Out'."""
    seen = {ds.snr_millibels(s) for s in train_snrs}
    return "In" if all(ds.snr_millibels(s) in seen for s in test_snrs) else "Out"


def cmd_eval(args) -> int:
    cfg = _load(args)
    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tests = []
    for path in args.test:
        path = Path(path)
        tests.append((path, ds.load_manifest(path)))

    rows = []
    for ci, ck_path in enumerate(args.checkpoint):
        ckpt = load_checkpoint(ck_path)
        _check_model(cfg, ckpt.config)
        model = ckpt.meta.get("role", Path(ck_path).stem)
        train_snrs = ckpt.meta.get("train_snrs_db", [])
        for ti, (path, entries) in enumerate(tests):
            if not entries:
                raise ds.InsufficientSamples(f"test manifest {path} is empty")
            data = ImageSet.from_manifest(entries, path.parent, ckpt.config)
            preds = predict(ckpt, data)
            cm = confusion(preds, ckpt.config.n_classes)
            rep = report(cm)
            snrs = sorted({e.snr_db for e in entries})
            stem = f"confusion_{ci}_{ti}"
            write_confusion_csv(cm, out / f"{stem}.csv")
            write_confusion_png(cm, out / f"{stem}.png")
            rows.append({
                "model": model, "checkpoint": str(ck_path), "test": str(path),
                "distribution": distribution(snrs, train_snrs), "snrs": ", ".join(f"{s:g} dB" for s in snrs),
                "samples": cm.total, "accuracy": rep.accuracy, "precision": rep.macro_precision,
                "recall": rep.macro_recall, "f1": rep.macro_f1, "confusion": f"{stem}.csv",
                "undefined": len(set(rep.undefined_precision) | set(rep.undefined_recall)),
            })

    header = f"{'Model':<11} {'Dist':<4} {'SNRs':<24} {'Samples':>7} {'Acc (%)':>8} {'Prec':>7} {'Recall':>7} {'F1':>7}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['model']:<11} {r['distribution']:<4} {r['snrs']:<24} {r['samples']:>7d} "
                     f"{100 * r['accuracy']:>8.2f} {r['precision']:>7.4f} {r['recall']:>7.4f} {r['f1']:>7.4f}")
    table = "\n".join(lines)
    print(table)
    (out / "report.txt").write_text(table + "\n", encoding="utf-8")
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"report and confusion matrices in {out}")
    return 0


def cmd_render(args) -> int:
    cfg = _load(args)
    scheme = ModulationScheme.parse(args.scheme)
    spec = cfg.dataset_spec()
    im = spec.imaging
    frame = replace(spec.frame, scheme=scheme, rng_seed=args.seed)
    channel = replace(spec.channel, snr_db=args.snr, rng_seed=child_seed(args.seed, "awgn"))
    _, noisy = transmit(frame, channel)

    gray = gray_to_rgb(rasterize_gray(noisy.samples, im.plane))
    mid = sorted(im.alphas)[1]
    enhanced = gray_to_rgb(enhance_gray(noisy.samples, im.plane, replace(im.decay, alpha=mid)))
    rgb = compose_three_channel(noisy.samples, im.plane, im.alphas, im.decay.power_mode, im.decay.cutoff_radius_px)

    out = _out_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tag = f"{scheme.value}_{args.snr:g}dB_seed{args.seed}"
    for name, img in (("gray", gray), ("enhanced", enhanced), ("three_channel", rgb)):
        path = out / f"{tag}_{name}.png"
        path.write_bytes(encode_png(upscale(img, args.zoom)))
        print(path)
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "finetune": cmd_finetune, "eval": cmd_eval, "render": cmd_render}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"amcvit: config error: {exc}", file=sys.stderr)
        return 1
    except InvalidScheme as exc:
        print(f"amcvit: InvalidScheme: {exc}", file=sys.stderr)
        return 2
    except (AmcError, OSError, ValueError) as exc:
        print(f"amcvit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
