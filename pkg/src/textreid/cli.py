"""Command-line interface.

Subcommands: gen-data, label-patches, train, eval, ablate, mim-compare,
sweep, grad-check, plot. Any invariant violation or malformed input exits
nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path


def _add_dataset_overrides(parser):
    parser.add_argument("--config", required=True, help="key=value config file")
    parser.add_argument("--dataset", help="override dataset_dir from the config")
    parser.add_argument("--out", help="override output_dir from the config")


def _load_config(args):
    from .config import load_config

    cfg, echo = load_config(args.config)
    overrides = {}
    if getattr(args, "dataset", None):
        overrides["dataset_dir"] = args.dataset
    if getattr(args, "out", None):
        overrides["output_dir"] = args.out
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides).validate()
    return cfg, echo


def cmd_gen_data(args) -> int:
    from .sprites import generate_dataset
    from .storage import write_dataset

    dataset = generate_dataset(seed=args.seed, num_identities=args.identities,
                               images_per_identity=args.images_per_identity,
                               captions_per_image=args.captions_per_image,
                               image_size=(args.height, args.width),
                               max_len=args.max_len, num_classes=args.num_classes)
    write_dataset(args.out, dataset)
    n_images = len({s.image_index for s in dataset.samples})
    print(f"wrote {n_images} images / {len(dataset.samples)} captions to {args.out}")
    return 0


def cmd_label_patches(args) -> int:
    from .patches import label_patches
    from .storage import read_pgm, write_pgm

    parse = read_pgm(args.parse, num_classes=args.num_classes)
    grid = label_patches(parse, args.patch_size, num_classes=args.num_classes)
    write_pgm(args.out, grid)
    print(f"labeled {grid.shape[0]}x{grid.shape[1]} patches -> {args.out}")
    return 0


def cmd_train(args) -> int:
    from .training import save_run, train

    cfg, echo = _load_config(args)
    report, model = train(cfg, config_echo=echo, log=print)
    save_run(cfg.output_dir, report, model)
    print(f"metrics: {report.final_metrics.to_json()}")
    print(f"wall clock: {report.wall_clock_sec:.1f}s")
    print(f"outputs in {cfg.output_dir}")
    return 0


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint, restore_into
    from .metrics import csv_header, csv_row
    from .sprites import split_by_identity
    from .storage import read_dataset
    from .training import Model, attach_patch_labels, evaluate_retrieval

    cfg, _ = _load_config(args)
    dataset = read_dataset(cfg.dataset_dir)
    attach_patch_labels(dataset, cfg.patch_size)
    train_samples, test_samples = split_by_identity(dataset, cfg.test_fraction)
    model = Model(cfg, dataset,
                  num_train_identities=len({s.identity_id for s in train_samples}))
    restore_into(model.all_params(), load_checkpoint(args.checkpoint))
    result, _, _, _ = evaluate_retrieval(model, test_samples)
    print(csv_header())
    print(csv_row(result))
    print(result.to_json())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(result.to_json() + "\n", encoding="utf-8")
        (out / "metrics.csv").write_text(csv_header() + "\n" + csv_row(result) + "\n",
                                         encoding="utf-8")
    return 0


def cmd_ablate(args) -> int:
    from .experiments import run_ablation, write_csv

    cfg, _ = _load_config(args)
    out_dir = Path(args.out or cfg.output_dir)
    reports, lines = run_ablation(cfg, log=print)
    write_csv(out_dir / "ablation.csv", lines)
    for line in lines:
        print(line)
    return 0


def cmd_mim_compare(args) -> int:
    from .experiments import run_mim_comparison, write_csv

    cfg, _ = _load_config(args)
    out_dir = Path(args.out or cfg.output_dir)
    reports, lines = run_mim_comparison(cfg, log=print)
    write_csv(out_dir / "mim_compare.csv", lines)
    for line in lines:
        print(line)
    return 0


def _parse_grid(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise SystemExit(f"cannot parse grid {text!r}: {exc}")


def cmd_sweep(args) -> int:
    from .experiments import MASK_RATE_GRID, WEIGHT_GRID, run_sweep, write_csv
    from .svgplot import sweep_charts

    cfg, _ = _load_config(args)
    out_dir = Path(args.out or cfg.output_dir)
    mask_grid = _parse_grid(args.mask_grid) if args.mask_grid else MASK_RATE_GRID
    weight_grid = _parse_grid(args.weight_grid) if args.weight_grid else WEIGHT_GRID
    reports, lines = run_sweep(cfg, mask_grid=mask_grid, weight_grid=weight_grid,
                               log=print)
    write_csv(out_dir / "sweep.csv", lines)
    rows = []
    for line in lines[1:]:
        rate, weight, rank1, *_ = line.split(",")
        rows.append((float(rate), float(weight), float(rank1)))
    charts = sweep_charts(rows, out_dir)
    print(f"wrote {out_dir / 'sweep.csv'} and {len(charts)} charts")
    return 0


def cmd_grad_check(args) -> int:
    from .gradcheck import CheckFailure, full_suite, run_named_checks

    try:
        run_named_checks(full_suite(instances=args.instances), tol=args.tolerance)
    except CheckFailure as exc:
        print(str(exc), file=sys.stderr)
        return 1
    print("all gradient checks passed")
    return 0


def cmd_plot(args) -> int:
    from .svgplot import sweep_charts

    lines = Path(args.csv).read_text(encoding="utf-8").strip().splitlines()
    header = lines[0].split(",")
    if header[:4] != ["patch_mask_rate", "mim_weight", "r1", "map"]:
        print(f"unexpected sweep CSV header: {lines[0]}", file=sys.stderr)
        return 1
    rows = []
    for line in lines[1:]:
        rate, weight, rank1, *_ = line.split(",")
        rows.append((float(rate), float(weight), float(rank1)))
    charts = sweep_charts(rows, args.out)
    for chart in charts:
        print(chart)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="textreid",
        description="Text-to-image person retrieval with bidirectional masked "
                    "modeling on a synthetic sprite benchmark.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic sprite dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--identities", type=int, default=64)
    p.add_argument("--images-per-identity", type=int, default=4)
    p.add_argument("--captions-per-image", type=int, default=2)
    p.add_argument("--max-len", type=int, default=48)
    p.add_argument("--num-classes", type=int, default=8)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=32)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("label-patches", help="majority-vote patch labels from a part mask")
    p.add_argument("--parse", required=True, help="input PGM part mask")
    p.add_argument("--patch-size", type=int, required=True)
    p.add_argument("--out", required=True, help="output PGM label grid")
    p.add_argument("--num-classes", type=int, default=None)
    p.set_defaults(fn=cmd_label_patches)

    p = sub.add_parser("train", help="train and evaluate one configuration")
    _add_dataset_overrides(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a stored checkpoint")
    _add_dataset_overrides(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the four masked-objective ablations")
    _add_dataset_overrides(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("mim-compare", help="compare masked-patch prediction targets")
    _add_dataset_overrides(p)
    p.set_defaults(fn=cmd_mim_compare)

    p = sub.add_parser("sweep", help="mask-rate and loss-weight grids")
    _add_dataset_overrides(p)
    p.add_argument("--mask-grid", help="comma-separated patch mask rates")
    p.add_argument("--weight-grid", help="comma-separated loss weights")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("grad-check", help="finite-difference gradient suite")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--instances", type=int, default=10)
    p.set_defaults(fn=cmd_grad_check)

    p = sub.add_parser("plot", help="render SVG charts from a sweep CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # surface every invariant violation as exit != 0
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
