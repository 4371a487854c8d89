"""Command-line entry point: ``surftopo <command> ...``.

Exit codes: 0 success, 1 internal error, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .classify import (compute_metrics, cross_val_predict, fisher_randomization_test,
                       paired_t_test, predict_batch, save_model, train_rusboost,
                       ZeroVariance)
from .errors import SurfTopoError
from .features import LabeledDataset, read_dataset_csv, write_dataset_csv
from .pipeline import (MAP_NAMES, REPRESENTATIONS, SEED_STREAMS, build_dataset, extract_maps,
                       load_config, sub_seed)
from .pointcloud import (PointCloud, load_cloud, load_labels, write_labels, write_ply,
                         write_xyz)
from .raster import read_gm1, write_gm1
from .render import STYLES, load_luminance, write_png
from .synth import LabeledCloud, SynthParams, generate_surface, write_manifest

logger = logging.getLogger("surftopo")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp"}


class UsageError(SurfTopoError):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {path}")
    return p


def _config(args, **flags):
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    for key, val in flags.items():
        if val is not None:
            overrides[key] = val
    if args.config is not None:
        _require_file(args.config)
    return load_config(args.config, overrides)


def _seed_doc(seed: int) -> dict:
    return {"seed": seed, "scheme": "SeedSequence([seed, counter])",
            "streams": {name: {"counter": c, "sub_seed": sub_seed(seed, name)}
                        for name, c in SEED_STREAMS.items()}}


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- synth -------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    extent = tuple(float(v) for v in args.extent.split(","))
    if len(extent) != 2:
        raise UsageError("--extent expects W,H in millimetres")
    params = SynthParams(
        extent_mm=extent, sample_spacing=args.spacing, curvature_amp=args.curvature_amp,
        groove_depth=args.groove_depth, groove_width=args.groove_width,
        roughness_sigma=args.roughness, outlier_fraction=args.outlier_fraction,
        outlier_amp=args.outlier_amp, target_minority_fraction=args.minority_fraction,
        seed=sub_seed(cfg.seed, "synth"), n_grooves=args.n_grooves,
    )
    labeled = generate_surface(params)
    write_ply(out / "surface.ply", labeled.cloud, binary=not args.ascii)
    write_labels(out / "surface.labels", labeled.labels)
    frac = float((labeled.labels == 2).mean())
    write_manifest(out / "synth.json", params, labeled.cloud.count, frac)
    logger.info("wrote %d points (%.3f class 2) to %s", labeled.cloud.count, frac, out)
    return 0


# --- extract -----------------------------------------------------------------

def cmd_extract(args) -> int:
    cfg = _config(args, pixel_size=args.pixel_size, structure_size=args.structure_size)
    cloud_path = _require_file(args.cloud)
    cloud = load_cloud(cloud_path)
    labeled = None
    if args.labels:
        labels = load_labels(_require_file(args.labels))
        if len(labels) != cloud.count:
            raise UsageError(f"{args.labels}: {len(labels)} labels for {cloud.count} points")
        labeled = LabeledCloud(cloud, labels)
    ex = extract_maps(cloud, cfg, labeled)
    out = _out_dir(args, cfg)
    for name in MAP_NAMES:
        write_gm1(out / f"{name}.gm1", ex.maps[name])
    if ex.labels is not None:
        write_gm1(out / "labels.gm1", ex.labels)
    depth = ex.maps["depth"]
    manifest = {
        "command": "extract",
        "version": __version__,
        "input": {"cloud": str(args.cloud), "sha256": _sha256(cloud_path),
                  "points": cloud.count,
                  "labels": str(args.labels) if args.labels else None},
        "config": cfg.to_dict(),
        "plane": ex.plane.to_dict(),
        "kernel": {"size": ex.kernel_size, "sigma": ex.kernel_sigma},
        "grid": {"width": depth.width, "height": depth.height,
                 "pixel_size": depth.pixel_size, "origin_u": depth.origin_u,
                 "origin_v": depth.origin_v},
        "maps": {n: f"{n}.gm1" for n in MAP_NAMES},
        "seeds": _seed_doc(cfg.seed),
    }
    _write_json(out / "manifest.json", manifest)
    if args.timings:
        _write_json(out / "timings.json", ex.timings)
    logger.info("wrote %s", ", ".join(f"{n}.gm1" for n in MAP_NAMES))
    return 0


# --- features ----------------------------------------------------------------

def cmd_features(args) -> int:
    families = args.families.split(",") if args.families else None
    cfg = _config(args, families=families, representation=args.representation)
    maps = {}
    labels_path = args.labels
    if len(args.maps) == 1 and Path(args.maps[0]).is_dir():
        root = Path(args.maps[0])
        for name in REPRESENTATIONS[cfg.representation]:
            maps[name] = read_gm1(_require_file(root / f"{name}.gm1"))
        if labels_path is None and (root / "labels.gm1").is_file():
            labels_path = root / "labels.gm1"
    else:
        for p in args.maps:
            maps[Path(p).stem] = read_gm1(_require_file(p))
    labels = read_gm1(_require_file(labels_path)) if labels_path else None
    if labels is not None and not labels.same_geometry(next(iter(maps.values()))):
        raise UsageError("label map geometry differs from the feature maps")
    data = build_dataset(maps, labels, cfg)
    out = Path(args.out) if args.out else _out_dir(args, cfg) / "dataset.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(out, data)
    logger.info("wrote %d rows x %d features to %s", len(data), data.n_features, out)
    return 0


# --- train-eval --------------------------------------------------------------

def _concat(datasets: list[LabeledDataset]) -> LabeledDataset:
    first = datasets[0]
    for d in datasets[1:]:
        if d.layout != first.layout:
            raise UsageError("datasets have different feature layouts")
    return LabeledDataset(np.vstack([d.X for d in datasets]),
                          np.concatenate([d.y for d in datasets]), list(first.layout))


def _split_surfaces(paths, test_spec):
    datasets = [read_dataset_csv(_require_file(p)) for p in paths]
    test_ids = set()
    if test_spec:
        try:
            test_ids = {int(s) for s in test_spec.split(",") if s.strip()}
        except ValueError:
            raise UsageError(f"--test-surfaces expects 1-based indices, got {test_spec!r}") from None
        if not test_ids <= set(range(1, len(datasets) + 1)):
            raise UsageError(f"--test-surfaces indices must lie in 1..{len(datasets)}")
        if len(test_ids) == len(datasets):
            raise UsageError("at least one surface must remain for training")
    train = [d for i, d in enumerate(datasets, 1) if i not in test_ids]
    test = [d for i, d in enumerate(datasets, 1) if i in test_ids]
    return _concat(train), (_concat(test) if test else None)


def _evaluate(train, test, cfg):
    cv_seed = sub_seed(cfg.seed, "cv")
    folds, pred = cross_val_predict(train, cfg.k_folds, cfg.n_rounds, cv_seed)
    per_fold = [compute_metrics(pred[folds == f], train.y[folds == f])
                for f in range(cfg.k_folds)]
    pooled = compute_metrics(pred, train.y)
    doc = {
        "cv": {
            "k": cfg.k_folds,
            "per_fold": [m.to_dict() for m in per_fold],
            "pooled": pooled.to_dict(),
            "f1_minority_pooled": pooled.f1_minority,
            "f1_minority_fold_mean": float(np.mean([m.f1_minority for m in per_fold])),
        },
        "rows": {"train": len(train), "test": len(test) if test is not None else 0},
    }
    model = train_rusboost(train, cfg.n_rounds, sub_seed(cfg.seed, "train"))
    if test is not None:
        doc["heldout"] = compute_metrics(predict_batch(model, test.X), test.y).to_dict()
    return doc, [m.f1_minority for m in per_fold], model


def cmd_train_eval(args) -> int:
    cfg = _config(args, n_rounds=args.n_rounds, k_folds=args.k_folds)
    train, test = _split_surfaces(args.datasets, args.test_surfaces)
    doc, scores, model = _evaluate(train, test, cfg)
    result = {"command": "train-eval", "version": __version__,
              "datasets": [str(p) for p in args.datasets],
              "test_surfaces": args.test_surfaces or "",
              "config": {k: cfg.to_dict()[k] for k in ("n_rounds", "k_folds", "seed")},
              "seeds": _seed_doc(cfg.seed), **doc}
    if args.compare:
        other_train, other_test = _split_surfaces(args.compare, args.test_surfaces)
        if not np.array_equal(other_train.y, train.y):
            raise UsageError("--compare datasets must describe the same blocks (labels differ)")
        other_doc, other_scores, _ = _evaluate(other_train, other_test, cfg)
        try:
            t_p = paired_t_test(scores, other_scores)
        except ZeroVariance:
            t_p = 1.0 if np.allclose(scores, other_scores) else 0.0
        result["comparison"] = {
            "datasets": [str(p) for p in args.compare],
            "cv": other_doc["cv"],
            "fisher_randomization_p": fisher_randomization_test(
                scores, other_scores, cfg.n_perm, sub_seed(cfg.seed, "randomization")),
            "paired_t_p": t_p,
            "alpha": 0.05,
        }
    out = Path(args.out) if args.out else _out_dir(args, cfg) / "metrics.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, result)
    if args.model_out:
        save_model(args.model_out, model)
    logger.info("pooled CV f1 (minority) = %.4f", doc["cv"]["f1_minority_pooled"])
    return 0


# --- render / convert --------------------------------------------------------

def cmd_render(args) -> int:
    grid = read_gm1(_require_file(args.map))
    out = Path(args.out) if args.out else Path(args.map).with_suffix(".png")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_png(out, grid, args.style)
    return 0


def cmd_convert(args) -> int:
    src = _require_file(args.input)
    dst = Path(args.output)
    s_suf, d_suf = src.suffix.lower(), dst.suffix.lower()
    if s_suf in IMAGE_SUFFIXES and d_suf == ".gm1":
        write_gm1(dst, load_luminance(src, args.pixel_size))
    elif s_suf in (".ply", ".xyz", ".txt") and d_suf in (".ply", ".xyz", ".txt"):
        cloud: PointCloud = load_cloud(src)
        if d_suf == ".ply":
            write_ply(dst, cloud, binary=not args.ascii)
        else:
            write_xyz(dst, cloud)
    else:
        raise UsageError(f"cannot convert {s_suf or 'no suffix'} to {d_suf or 'no suffix'}")
    return 0


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", help="output directory or file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="surftopo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic engraved surface")
    p.add_argument("--extent", default="20,20", help="W,H in mm")
    p.add_argument("--spacing", type=float, default=0.05)
    p.add_argument("--curvature-amp", type=float, default=5.0)
    p.add_argument("--groove-depth", type=float, default=0.5)
    p.add_argument("--groove-width", type=float, default=4.0)
    p.add_argument("--roughness", type=float, default=0.02)
    p.add_argument("--outlier-fraction", type=float, default=0.001)
    p.add_argument("--outlier-amp", type=float, default=2.0)
    p.add_argument("--minority-fraction", type=float, default=0.166)
    p.add_argument("--n-grooves", type=int, default=None)
    p.add_argument("--ascii", action="store_true", help="write ASCII PLY")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", parents=[common], help="point cloud to topography maps")
    p.add_argument("cloud", help="PLY or XYZ point cloud")
    p.add_argument("--labels", help="per-point label file")
    p.add_argument("--pixel-size", type=float)
    p.add_argument("--structure-size", type=float)
    p.add_argument("--timings", action="store_true", help="also write timings.json")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("features", parents=[common], help="block features to CSV")
    p.add_argument("maps", nargs="+", help="extract output directory, or GM1 map files")
    p.add_argument("--labels", help="label map (GM1)")
    p.add_argument("--families", help="comma list of ghs,sf,lbp,glcm,hog")
    p.add_argument("--representation", choices=sorted(REPRESENTATIONS))
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train-eval", parents=[common], help="RUSBoost cross-validation")
    p.add_argument("datasets", nargs="+", help="one feature CSV per surface")
    p.add_argument("--test-surfaces", help="1-based indices of held-out surfaces, e.g. 3,4")
    p.add_argument("--compare", nargs="+", help="CSVs of a second feature configuration")
    p.add_argument("--n-rounds", type=int)
    p.add_argument("--k-folds", type=int)
    p.add_argument("--model-out", help="write the model trained on all training rows")
    p.set_defaults(func=cmd_train_eval)

    p = sub.add_parser("render", parents=[common], help="GM1 map to PNG")
    p.add_argument("map")
    p.add_argument("--style", choices=STYLES, default="gray")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("convert", parents=[common], help="PLY<->XYZ, image->GM1")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--pixel-size", type=float, default=1.0)
    p.add_argument("--ascii", action="store_true")
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SurfTopoError, OSError) as exc:
        print(f"surftopo {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        logger.exception("internal error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
