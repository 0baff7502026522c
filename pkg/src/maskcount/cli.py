"""Command-line entry points tying the modules into reproducible runs.

Subcommands: synth, gen-gt, train, eval, predict, ablate, report. Every
command that writes artifacts drops a run_manifest.json (command, resolved
arguments, config hash, seed, package version) into its output directory,
so a run can be reproduced from the manifest alone.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .data import (
    DatasetManifest,
    SceneSpec,
    load_dataset,
    load_image,
    save_density,
    save_image,
    synth_generate,
)
from .exceptions import DataError, NumericError
from .gt import GtConfig, downsample_density, downsample_mask
from .metrics import EvalReport, count_from_density, evaluate, plot_strata, write_predictions_csv
from .model import FusionVariant, assemble_model, count_parameters, load_checkpoint, predict_maps
from .train import make_eval_triples, make_train_patches, train

VARIANT_NAMES = [v.value for v in FusionVariant]


def _write_run_manifest(out_dir: Path, command: str, args: dict, config_hash: str, seed) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "version": __version__,
        "argv": sys.argv[1:],
        "args": args,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)


def _args_hash(args: dict) -> str:
    import hashlib

    return hashlib.sha256(json.dumps(args, sort_keys=True).encode()).hexdigest()[:16]


def _clean_args(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    spec = SceneSpec(
        width=args.width,
        height=args.height,
        count_range=(args.count_min, args.count_max),
        head_radius_range=(args.radius_min, args.radius_max),
        background=args.background,
        seed=args.seed,
    )
    out = Path(args.out)
    manifest = synth_generate(spec, args.n_images, out)
    manifest.split = args.split
    manifest.save(out / "manifest.json")
    _write_run_manifest(out, "synth", _clean_args(args), _args_hash(_clean_args(args)), args.seed)
    print(f"wrote {len(manifest)} scenes under {out} (manifest.json)")
    return 0


# ---------------------------------------------------------------------------
# gen-gt


def cmd_gen_gt(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    gt_cfg = GtConfig(sigma=args.sigma, radius=args.radius)
    out = Path(args.out)
    (out / "density").mkdir(parents=True, exist_ok=True)
    (out / "mask").mkdir(parents=True, exist_ok=True)
    index = []
    for entry in load_dataset(manifest, gt_cfg):
        density, mask = entry.density, entry.mask
        if args.downsample > 1:
            density = downsample_density(density, args.downsample)
            mask = downsample_mask(mask, args.downsample)
        den_rel = f"density/{entry.image_id}.npy"
        mask_rel = f"mask/{entry.image_id}.png"
        save_density(out / den_rel, density)
        save_image(out / mask_rel, mask.astype(np.float64))
        index.append(
            {"image_id": entry.image_id, "density": den_rel, "mask": mask_rel,
             "count": entry.gt_count}
        )
    with open(out / "gt_index.json", "w") as fh:
        json.dump(index, fh, indent=1)
    _write_run_manifest(out, "gen-gt", _clean_args(args), _args_hash(_clean_args(args)), None)
    print(f"wrote ground truth for {len(index)} images under {out}")
    return 0


# ---------------------------------------------------------------------------
# train


def _run_training(cfg: ExperimentConfig, variant: str, seed: int, out_dir: Path, verbose: bool):
    if not cfg.train_manifest:
        raise DataError("config is missing train_manifest")
    gt_cfg = cfg.gt_config()
    train_entries = list(load_dataset(DatasetManifest.load(cfg.train_manifest), gt_cfg))
    rng = np.random.default_rng(seed)
    patches = make_train_patches(
        train_entries, gt_cfg, cfg.patches_per_image, cfg.patch_size(), rng
    )
    val_set = None
    if cfg.val_manifest:
        val_entries = list(load_dataset(DatasetManifest.load(cfg.val_manifest), gt_cfg))
        val_set = make_eval_triples(val_entries, gt_cfg)
    model = assemble_model(variant, cfg.backbone_config(), seed=seed)
    extra = {"experiment": cfg.to_dict() | {"variant": variant, "seed": seed},
             "config_hash": cfg.hash()}
    result = train(
        model,
        patches,
        cfg.schedule(seed=seed),
        cfg.loss_config(),
        val_set=val_set,
        out_dir=out_dir,
        log_every=1 if verbose else 0,
        checkpoint_extra=extra,
    )
    return model, result


def cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    variant = args.variant or cfg.variant
    seed = cfg.seed if args.seed is None else args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_run_manifest(
        out, "train", {"config": cfg.to_dict(), "variant": variant, "seed": seed},
        cfg.hash(), seed,
    )
    model, result = _run_training(cfg, variant, seed, out, args.verbose)
    final = result.final
    switch = [e.epoch for e in result.epochs if e.optimizer == "sgd"]
    print(f"trained {variant} for {final.epoch} epochs "
          f"({count_parameters(model)} parameters)")
    if switch:
        print(f"optimizer switch adam->sgd at epoch {switch[0]}")
    print(f"final train_mae={final.train_mae:.4f}"
          + (f" val_mae={final.val_mae:.4f}" if final.val_mae is not None else ""))
    if result.best_val_mae is not None:
        print(f"best val_mae={result.best_val_mae:.4f} at epoch {result.best_epoch}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _predict_count(model, entry, gt_cfg: GtConfig, clamp: bool) -> float:
    density, _ = predict_maps(model, entry.image)
    if entry.roi is not None:
        roi_ds = downsample_mask(entry.roi, gt_cfg.downsample)
        density = density * roi_ds
    return count_from_density(density, clamp_negative=clamp)


def _evaluate_checkpoint(checkpoint, manifest_path, gt_cfg=None, clamp=False):
    model, ckpt_manifest = load_checkpoint(checkpoint)
    if gt_cfg is None:
        exp = ckpt_manifest.get("experiment", {})
        gt_cfg = GtConfig(
            sigma=exp.get("sigma", 4.0),
            radius=exp.get("radius", 15),
            downsample=exp.get("downsample", 4),
        )
    manifest = DatasetManifest.load(manifest_path)
    raw_rows = []
    for entry in load_dataset(manifest, gt_cfg):
        pr = _predict_count(model, entry, gt_cfg, clamp=False)
        raw_rows.append((entry.image_id, pr, entry.gt_count))
    clamped_rows = [(i, max(0.0, pr), gt) for i, pr, gt in raw_rows]
    rows = clamped_rows if clamp else raw_rows
    report = evaluate([(pr, gt) for _, pr, gt in rows])
    # both counting modes are always reported; only the active one is exported
    alt_rows = raw_rows if clamp else clamped_rows
    alt = evaluate([(pr, gt) for _, pr, gt in alt_rows])
    return report, rows, ckpt_manifest, alt


def cmd_eval(args) -> int:
    gt_cfg = None
    if args.sigma is not None or args.radius is not None:
        gt_cfg = GtConfig(sigma=args.sigma or 4.0, radius=args.radius or 15)
    report, rows, ckpt_manifest, alt = _evaluate_checkpoint(
        args.checkpoint, args.manifest, gt_cfg, args.clamp
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    write_predictions_csv(out / "predictions.csv", rows)
    if args.chart:
        plot_strata(report, out / "strata.png")
    _write_run_manifest(
        out, "eval",
        {"checkpoint": str(args.checkpoint), "manifest": str(args.manifest),
         "clamp": args.clamp},
        ckpt_manifest.get("config_hash", _args_hash(_clean_args(args))),
        ckpt_manifest.get("seed"),
    )
    mode, alt_mode = ("clamped", "raw") if args.clamp else ("raw", "clamped")
    print(f"evaluated {report.n} images [{mode}]: mae={report.mae:.4f} mse={report.mse:.4f}")
    print(f"  ({alt_mode} counting: mae={alt.mae:.4f} mse={alt.mse:.4f})")
    for s in report.strata:
        print(f"  {s.label:>7}: mae={s.mae:.4f} (n={s.n})")
    if report.empty.n:
        print(f"  {'empty':>7}: mae={report.empty.mae:.4f} (n={report.empty.n})")
    return 0


# ---------------------------------------------------------------------------
# predict


def cmd_predict(args) -> int:
    model, ckpt_manifest = load_checkpoint(args.checkpoint, expected_variant=args.variant)
    image = load_image(args.image)
    density, posterior = predict_maps(model, image)
    count = count_from_density(density, clamp_negative=args.clamp)
    if args.dump_density:
        save_density(args.dump_density, density)
    if args.dump_mask:
        if posterior is None:
            raise DataError(
                f"variant {ckpt_manifest['variant']} has no mask posterior to dump"
            )
        from .data import save_image

        save_image(args.dump_mask, (posterior > 0.5).astype(np.float64))
    if args.dump_activations:
        from .model import collect_activations

        act_dir = Path(args.dump_activations)
        act_dir.mkdir(parents=True, exist_ok=True)
        for name, arr in collect_activations(model, image).items():
            np.save(act_dir / f"{name}.npy", arr)
    print(f"{count:.4f}")
    return 0


# ---------------------------------------------------------------------------
# ablate


def cmd_ablate(args) -> int:
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not variants or not seeds:
        raise UsageError("ablate needs at least one variant and one seed")
    for v in variants:
        if v not in VARIANT_NAMES:
            raise UsageError(f"unknown variant {v!r} (choose from {', '.join(VARIANT_NAMES)})")
    cfg = ExperimentConfig.load(args.config)
    eval_manifest = cfg.test_manifest or cfg.val_manifest
    if not eval_manifest:
        raise DataError("config needs test_manifest or val_manifest for ablation")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_run_manifest(
        out, "ablate",
        {"config": cfg.to_dict(), "variants": variants, "seeds": seeds},
        cfg.hash(), seeds,
    )

    results: dict[str, list[tuple[float, float]]] = {v: [] for v in variants}
    for variant in variants:
        for seed in seeds:
            run_dir = out / "runs" / f"{variant}_seed{seed}"
            _run_training(cfg, variant, seed, run_dir, args.verbose)
            report, _, _, _ = _evaluate_checkpoint(
                run_dir / "checkpoints" / "last.npz", eval_manifest,
                cfg.gt_config(), cfg.clamp_counts,
            )
            results[variant].append((report.mae, report.mse))
            print(f"[{variant} seed {seed}] mae={report.mae:.4f} mse={report.mse:.4f}")

    rows = []
    for variant in variants:
        maes = [m for m, _ in results[variant]]
        mses = [m for _, m in results[variant]]
        rows.append(
            {
                "variant": variant,
                "seeds": len(seeds),
                "mae_mean": statistics.mean(maes),
                "mae_std": statistics.stdev(maes) if len(maes) > 1 else 0.0,
                "mse_mean": statistics.mean(mses),
                "mse_std": statistics.stdev(mses) if len(mses) > 1 else 0.0,
            }
        )
    import csv as _csv

    with open(out / "ablate.csv", "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    lines = [f"{'variant':<8} {'MAE':>16} {'MSE':>16}"]
    for row in rows:
        lines.append(
            f"{row['variant']:<8} {row['mae_mean']:>9.3f} ± {row['mae_std']:<5.3f}"
            f"{row['mse_mean']:>9.3f} ± {row['mse_std']:<5.3f}"
        )
    table = "\n".join(lines)
    (out / "ablate.txt").write_text(table + "\n")
    print(table)
    return 0


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    try:
        report = EvalReport.load(args.report)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load report {args.report}: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plot_strata(report, out / "strata.png")
    lines = [
        f"images: {report.n}",
        f"overall: mae={report.mae:.4f} mse={report.mse:.4f}",
    ]
    for s in report.strata:
        lines.append(f"{s.label:>7}: mae={s.mae:.4f} (n={s.n})")
    lines.append(f"{'empty':>7}: mae={report.empty.mae:.4f} (n={report.empty.n})")
    summary = "\n".join(lines)
    (out / "summary.txt").write_text(summary + "\n")
    _write_run_manifest(out, "report", {"report": str(args.report)},
                        _args_hash({"report": str(args.report)}), None)
    print(summary)
    return 0


# ---------------------------------------------------------------------------
# parser / entry point


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskcount",
        description="Mask-aware density regression for crowd counting",
    )
    parser.add_argument("--version", action="version", version=f"maskcount {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic annotated dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-images", type=int, required=True)
    p.add_argument("--width", type=int, default=192)
    p.add_argument("--height", type=int, default=160)
    p.add_argument("--count-min", type=int, default=10)
    p.add_argument("--count-max", type=int, default=60)
    p.add_argument("--radius-min", type=float, default=2.0)
    p.add_argument("--radius-max", type=float, default=5.0)
    p.add_argument("--background", choices=["flat", "gradient", "noise"], default="flat")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gen-gt", help="write density/mask ground truth for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, default=4.0)
    p.add_argument("--radius", type=int, default=15)
    p.add_argument("--downsample", type=int, default=1)
    p.set_defaults(func=cmd_gen_gt)

    p = sub.add_parser("train", help="train one variant from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=VARIANT_NAMES)
    p.add_argument("--seed", type=int)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float)
    p.add_argument("--radius", type=int)
    p.add_argument("--clamp", action="store_true")
    p.add_argument("--chart", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict the count for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--variant", choices=VARIANT_NAMES)
    p.add_argument("--dump-density")
    p.add_argument("--dump-mask")
    p.add_argument("--dump-activations", help="debug: write per-module feature maps")
    p.add_argument("--clamp", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="compare variants across seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--variants", required=True, help="comma-separated, e.g. S1,S2,B1")
    p.add_argument("--seeds", required=True, help="comma-separated integers")
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render an evaluation report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
