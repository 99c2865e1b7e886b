"""Command-line entry point: ``skintone-audit <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import explain as cem
from .errors import AuditError, EmptyMask
from .imaging import (
    RasterImage,
    SkinRule,
    chroma_histograms,
    crop_face,
    detect_skin,
    rgb_to_ycrcb,
    skin_luminance_histogram,
    write_histogram,
    ycrcb_to_rgb,
)
from .manifest import ATTRIBUTES, group_accuracy, load_manifest, row_id
from .model import (
    NetClassifier,
    Preprocessor,
    RemoteClassifier,
    TrainConfig,
    load_checkpoint,
    save_checkpoint,
    score_many,
    train,
)
from .model.net import FEMALE, MALE
from .model.remote import ENDPOINT_ENV
from .skin_transform import (
    EnsembleConfig,
    ModeShiftSpec,
    apply_transport,
    default_palette_dir,
    load_palette,
    load_palette_dir,
    luminance_mode,
    mode_shift,
    transport_map,
)
from .stability import StabilityItem, build_report, run_stability, write_report
from .synthetic import make_dataset

log = logging.getLogger("skintone_audit")


def _rule(args) -> SkinRule:
    return SkinRule(args.cr_min, args.cr_max, args.cb_min, args.cb_max)


def _add_rule_flags(p):
    p.add_argument("--cr-min", type=int, default=90)
    p.add_argument("--cr-max", type=int, default=115)
    p.add_argument("--cb-min", type=int, default=140)
    p.add_argument("--cb-max", type=int, default=195)


def _add_scorer_flags(p, allow_scores=False):
    p.add_argument("--model", type=Path, help="CompactNet checkpoint")
    p.add_argument("--endpoint", help=f"remote scoring URL (default: ${ENDPOINT_ENV})")
    if allow_scores:
        p.add_argument("--scores", type=Path, help="CSV with columns path,score")


def _classifier(args):
    if args.model is not None:
        return NetClassifier(load_checkpoint(args.model))
    return RemoteClassifier(args.endpoint)


# --------------------------------------------------------------- commands

def cmd_detect_skin(args) -> int:
    img = rgb_to_ycrcb(RasterImage.open(args.image))
    mask = detect_skin(img, _rule(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    RasterImage(np.repeat((mask.bits * 255).astype(np.uint8)[..., None], 3, axis=2)).save(out / "mask.png")
    hist = skin_luminance_histogram(img, mask)
    chroma = chroma_histograms([(img, mask)])
    write_histogram(out / "y_hist.txt", hist.counts)
    write_histogram(out / "cr_hist.txt", chroma.cr_counts)
    write_histogram(out / "cb_hist.txt", chroma.cb_counts)
    print(f"skin pixels: {mask.count}  mode Y: {luminance_mode(hist)}")
    return 0


def cmd_transform(args) -> int:
    img = rgb_to_ycrcb(RasterImage.open(args.image))
    mask = detect_skin(img, _rule(args))
    meta = {"method": args.method, "source": Path(args.image).name}
    if args.method == "mode-shift":
        if args.target_mode is None:
            raise SystemExit("error: --target-mode is required for --method mode-shift")
        old = luminance_mode(skin_luminance_histogram(img, mask))
        out_img = mode_shift(img, mask, ModeShiftSpec(args.target_mode, args.scope))
        meta.update(old_mode=old, target_mode=args.target_mode, delta=args.target_mode - old, scope=args.scope)
    else:
        if args.palette is None:
            raise SystemExit("error: --palette is required for --method ot")
        plan = transport_map(skin_luminance_histogram(img, mask), load_palette(args.palette))
        out_img = apply_transport(img, mask, plan)
        meta.update(palette_id=Path(args.palette).stem)
    ycrcb_to_rgb(out_img).save(args.out)
    Path(str(args.out) + ".json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return 0


def cmd_train_model(args) -> int:
    rows = load_manifest(args.manifest)
    config = TrainConfig(side=args.side, channels=args.channels, learning_rate=args.lr,
                         epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)
    pre = Preprocessor(args.side, args.channels)
    inputs, labels = [], []
    for row in rows:
        img = RasterImage.open(row.path)
        if args.crop and row.crop is not None:
            img = crop_face(img, row.crop, args.pad)
        inputs.append(pre.to_input(img))
        labels.append(MALE if row.gender == "male" else FEMALE)
    net = train(config, np.stack(inputs), np.array(labels))
    save_checkpoint(net, args.out)
    acc = np.mean((net.predict_scores(np.stack(inputs)) > 0.5) == (np.array(labels) == MALE))
    print(f"trained on {len(rows)} images, train accuracy {acc:.6g}")
    return 0


def cmd_audit_stability(args) -> int:
    rows = load_manifest(args.manifest)
    if args.gender:
        rows = [r for r in rows if r.gender == args.gender]
    if args.skin_type:
        rows = [r for r in rows if r.skin_type == args.skin_type]
    base = Path(args.manifest).resolve().parent
    rule = _rule(args)
    items, excluded = [], []
    for row in rows:
        img = rgb_to_ycrcb(RasterImage.open(row.path))
        mask = detect_skin(img, rule)
        rid = row_id(row, base)
        if mask.count == 0:
            log.info("excluding %s: %s", rid, EmptyMask.__name__)
            excluded.append(rid)
            continue
        items.append(StabilityItem(rid, img, mask, row.gender))
    palettes = {}
    if args.method == "ot":
        palettes = load_palette_dir(args.palettes or default_palette_dir())
    config = EnsembleConfig(step=args.step, scope=args.scope, palettes=palettes)
    records = run_stability(_classifier(args), items, args.direction, args.method, config, excluded)
    group = "-".join(x for x in (args.skin_type, args.gender) if x) or "all"
    report = build_report(group, records, args.direction, args.method, threshold=args.threshold,
                          bins=args.bins, excluded=sorted(excluded))
    write_report(report, args.out)
    print((Path(args.out) / "report.txt").read_text(), end="")
    return 0


def _read_scores(path: Path) -> dict:
    base = path.resolve().parent
    scores = {}
    with path.open(newline="") as fh:
        for rec in csv.DictReader(fh):
            p = Path(rec["path"])
            p = p if p.is_absolute() else base / p
            scores[Path(p).resolve()] = float(rec["score"])
    return scores


def cmd_accuracy_table(args) -> int:
    rows = load_manifest(args.manifest)
    group_by = [a.strip() for a in args.group_by.split(",") if a.strip()]
    bad = [a for a in group_by if a not in ATTRIBUTES]
    if bad:
        raise SystemExit(f"error: --group-by: unknown attribute(s) {bad}; choose from {list(ATTRIBUTES)}")
    if args.scores is not None:
        scores = _read_scores(args.scores)
        scores = {r.path: scores[Path(r.path).resolve()] for r in rows if Path(r.path).resolve() in scores}
    else:
        imgs = []
        for row in rows:
            img = RasterImage.open(row.path)
            if args.crop:
                if row.crop is None:
                    raise SystemExit(f"error: --crop: row {row.path} has no crop box")
                img = crop_face(img, row.crop, args.pad)
            imgs.append(img)
        scores = dict(zip((r.path for r in rows), score_many(_classifier(args), imgs)))
    table = group_accuracy(rows, scores, group_by)
    text = table.to_csv()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_explain(args) -> int:
    rows = load_manifest(args.manifest)
    net = load_checkpoint(args.model)
    clf = NetClassifier(net)
    params = cem.CemParams(kappa=args.kappa, beta=args.beta,
                           c_grid=tuple(float(c) for c in args.c_grid.split(",")),
                           max_iters=args.max_iters)
    base = Path(args.manifest).resolve().parent
    out = Path(args.out)
    masks = out / "masks"
    masks.mkdir(parents=True, exist_ok=True)
    groups: dict[str, list] = {"female": [], "male": []}
    lines = ["image_id,gender,chosen_c,f_kappa,l1,iterations,converged"]
    if args.limit:
        rows = rows[:args.limit]
    for row in rows:
        x = clf.preprocessor.to_input(RasterImage.open(row.path))
        k = MALE if row.gender == "male" else FEMALE
        if cem.decision_class(net.logits(x)) != k:
            continue  # only correctly classified inputs are explained
        pp = cem.search_c(net, x, k, params)
        rid = row_id(row, base)
        stem = rid.replace("/", "_").rsplit(".", 1)[0]
        np.save(masks / f"{stem}.npy", pp.delta)
        clf.preprocessor.to_image(pp.delta).save(masks / f"{stem}.png")
        groups[row.gender].append(pp)
        lines.append(f"{rid},{row.gender},{pp.chosen_c:.6g},{pp.achieved_f_kappa:.6g},"
                     f"{pp.l1:.6g},{pp.iterations},{int(pp.converged)}")
    for gender, pps in groups.items():
        try:
            avg = cem.average_mask(pps, gender)
        except AuditError as exc:
            log.info("no average mask for %s: %s", gender, exc)
            continue
        np.save(masks / f"average_{gender}.npy", avg.mean)
        clf.preprocessor.to_image(avg.mean).save(masks / f"average_{gender}.png")
        lines.append(f"# average_{gender}: {avg.count} explanation(s)")
    (out / "explain.csv").write_text("\n".join(lines) + "\n")
    print(f"explained {sum(len(v) for v in groups.values())} image(s) into {out}")
    return 0


def cmd_synth(args) -> int:
    manifest = make_dataset(args.out, n=args.n, seed=args.seed, side=args.side)
    print(manifest)
    return 0


# ----------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skintone-audit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect-skin", help="skin mask and Y/Cr/Cb histograms for one image")
    p.add_argument("image", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _add_rule_flags(p)
    p.set_defaults(func=cmd_detect_skin)

    p = sub.add_parser("transform", help="lighten/darken one image")
    p.add_argument("image", type=Path)
    p.add_argument("--method", choices=["mode-shift", "ot"], required=True)
    p.add_argument("--target-mode", type=int)
    p.add_argument("--scope", choices=["whole-image", "skin-only"], default="whole-image")
    p.add_argument("--palette", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _add_rule_flags(p)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("train-model", help="train the built-in CompactNet on a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--side", type=int, default=32)
    p.add_argument("--channels", type=int, choices=[1, 3], default=3)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--crop", action="store_true", help="train on manifest crop boxes")
    p.add_argument("--pad", type=float, default=0.0)
    p.set_defaults(func=cmd_train_model)

    p = sub.add_parser("audit-stability", help="skin-tone stability report")
    p.add_argument("--manifest", type=Path, required=True)
    _add_scorer_flags(p)
    p.add_argument("--direction", choices=["lighten", "darken"], required=True)
    p.add_argument("--method", choices=["mode-shift", "ot"], required=True)
    p.add_argument("--palettes", type=Path, help="directory of *.txt palettes (default: bundled)")
    p.add_argument("--gender", choices=["female", "male"])
    p.add_argument("--skin-type", choices=["dark", "light"])
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--step", type=int, default=10)
    p.add_argument("--scope", choices=["whole-image", "skin-only"], default="whole-image")
    p.add_argument("--out", type=Path, required=True)
    _add_rule_flags(p)
    p.set_defaults(func=cmd_audit_stability)

    p = sub.add_parser("accuracy-table", help="intersectional accuracy table")
    p.add_argument("--manifest", type=Path, required=True)
    _add_scorer_flags(p, allow_scores=True)
    p.add_argument("--group-by", default="skin_type,gender")
    p.add_argument("--crop", action="store_true", help="score face crops only")
    p.add_argument("--pad", type=float, default=0.0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_accuracy_table)

    p = sub.add_parser("explain", help="pertinent-positive masks with the built-in model")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--kappa", type=float, default=10.0)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--c-grid", default="0.1,1,10,100")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--limit", type=int, default=0, help="explain at most N rows")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("synth", help="write a seeded synthetic face set and manifest")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--side", type=int, default=32)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    needs_scorer = args.command in ("audit-stability", "accuracy-table")
    if needs_scorer and args.model is None and getattr(args, "scores", None) is None:
        if not (args.endpoint or os.environ.get(ENDPOINT_ENV)):
            parser.error(f"{args.command}: one of --model, --endpoint"
                         f"{', --scores' if args.command == 'accuracy-table' else ''} is required")
    try:
        return args.func(args)
    except (AuditError, ValueError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
