"""``amfkit`` command line.

Exit codes: 0 success, 2 usage error, 3 bad config file, 4 config mismatch
between artifacts, 10+ a failing stage (see ``STAGE_EXIT``).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .anisotropy import anisotropy_map
from .config import ConfigError, ConfigMismatchError, RunConfig, check_hashes, load_config
from .features import FeatureTable, default_specs, extract_features, read_features_csv, write_features_csv
from .kernelgen import direction_set_13, kernel_bank, make_kernel
from .minkowski import amf_field, load_responses, save_responses
from .phantom import KINDS, PhantomSpec, gen_cohort, gen_gray, gen_shape, read_targets_csv, write_cohort
from .pipeline import (STAGES, StageError, calibrate, evaluate_table, load_maps, run_pipeline,
                       save_maps, stage, voi_mask, write_report)
from .volume_io import (BinaryVolume, GrayVolume, VoiMask, binarize, load_volume, read_config_hash,
                        save_volume)

EXIT_CONFIG = 3
EXIT_MISMATCH = 4
STAGE_EXIT = {name: 10 + i for i, name in enumerate(STAGES + ("pipeline", "bench"))}

log = logging.getLogger("amfkit")


def _config(args) -> RunConfig:
    if not getattr(args, "config", None):
        return RunConfig()
    try:
        return load_config(args.config)
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc


def _vec(text: str):
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers")
    return tuple(parts)


# --------------------------------------------------------------------------
# subcommands

def cmd_phantom(args):
    cfg = _config(args)
    out = Path(args.out)
    if args.cohort:
        with stage("phantom", n=args.cohort):
            cohort = gen_cohort(cfg.replace(cohort_n=args.cohort, cohort_size=args.size, seed=args.seed).cohort())
            write_cohort(cohort, out)
        return
    with stage("phantom", kind=args.kind, size=args.size, seed=args.seed):
        kwargs = {k: getattr(args, k) for k in ("radius", "thickness", "spacing", "major_radius",
                                                 "volume_fraction") if getattr(args, k) is not None}
        if args.orientation:
            kwargs["orientation"] = args.orientation
        if args.box:
            kwargs["box"] = tuple(int(b) for b in args.box)
        spec = PhantomSpec(args.kind, args.size, seed=args.seed, **kwargs)
        out.mkdir(parents=True, exist_ok=True)
        save_volume(gen_shape(spec), out / "shape")
        save_volume(gen_gray(spec, noise=args.noise), out / "volume")
        manifest = {"generator": "amfkit.phantom.gen_shape", "spec": spec.__dict__,
                    "bone_value": 800.0, "background": 0.0, "noise": args.noise,
                    "files": {"shape": "shape.vol.json", "volume": "volume.vol.json"}}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_kernel(args):
    cfg = _config(args)
    with stage("kernel", direction=args.dir):
        if not 0 <= args.dir < 13:
            raise ValueError("direction index must be in 0..12")
        kernel = make_kernel(direction_set_13()[args.dir], args.size or cfg.kernel_size,
                             args.sigma_major or cfg.sigma_major)
        save_volume(kernel.as_volume(), args.dump)


def cmd_calibrate(args):
    cfg = _config(args)
    with stage("calibrate"):
        if args.hu_water is not None or args.hu_bone is not None:
            cfg = cfg.replace(hu_water=args.hu_water if args.hu_water is not None else cfg.hu_water,
                              hu_bone=args.hu_bone if args.hu_bone is not None else cfg.hu_bone)
        volume = load_volume(args.input)
        if not isinstance(volume, GrayVolume):
            raise ValueError("calibrate needs a gray volume")
        save_volume(calibrate(volume, cfg), args.out, config_hash=cfg.hash())


def cmd_binarize(args):
    cfg = _config(args)
    with stage("binarize"):
        volume = load_volume(args.input)
        check_hashes(cfg.hash() if args.config else None, volume=read_config_hash(args.input))
        threshold = cfg.threshold if args.threshold is None else args.threshold
        mask = load_volume(args.mask) if args.mask else voi_mask(cfg, volume.dims)
        if isinstance(mask, BinaryVolume):
            mask = VoiMask(mask.data)
        save_volume(binarize(volume, threshold, mask), args.out, config_hash=cfg.hash())


def cmd_amf(args):
    cfg = _config(args)
    mode = args.mode or cfg.mode
    cfg = cfg.replace(mode=mode)
    with stage("amf", mode=mode):
        volume = load_volume(args.input)
        if not isinstance(volume, BinaryVolume):
            raise ValueError("amf needs a binary volume; run binarize first")
        check_hashes(cfg.hash() if args.config else None, volume=read_config_hash(args.input))
        field = amf_field(volume, kernel_bank(cfg.kernel_size, cfg.sigma_major), cfg.mode, cfg.workers)
        save_responses(field, args.out, cfg.hash())


def cmd_anisotropy(args):
    cfg = _config(args)
    with stage("anisotropy"):
        field, h = load_responses(args.responses, direction_set_13())
        check_hashes(cfg.hash() if args.config else None, responses=h)
        save_maps(anisotropy_map(field), args.out, config_hash=h or cfg.hash())


def cmd_features(args):
    cfg = _config(args)
    with stage("features", specimens=len(args.specimen)):
        vectors = []
        hashes = {}
        for sid, maps_path, bmd_path in args.specimen:
            maps, mh = load_maps(maps_path)
            bmd = load_volume(bmd_path)
            hashes[f"{sid}.maps"] = mh
            hashes[f"{sid}.bmd"] = read_config_hash(bmd_path)
            vectors.append(extract_features(maps, bmd, voi_mask(cfg, bmd.dims), default_specs(cfg.bins),
                                            sid, cfg.include_background))
        check_hashes(cfg.hash() if args.config else None, **hashes)
        found = {h for h in hashes.values() if h}
        table = FeatureTable.from_vectors(vectors, cfg.bins, found.pop() if found else cfg.hash())
        write_features_csv(table, args.out)


def cmd_evaluate(args):
    cfg = _config(args)
    with stage("evaluate") as info:
        table = read_features_csv(args.features)
        report = evaluate_table(table, read_targets_csv(args.targets), cfg)
        write_report(report, Path(args.out))
        info["best"] = report.best.feature_set
    print(report.format_table())


def cmd_pipeline(args):
    cfg = _config(args)
    overrides = {}
    if args.out:
        overrides["output_dir"] = args.out
    if args.input:
        overrides["input_dir"] = args.input
    if args.mode:
        overrides["mode"] = args.mode
    cfg = cfg.replace(**overrides)
    report = run_pipeline(cfg)
    print(report.format_table())


def run_bench(sizes, modes, oracle_max: int, density: float, seed: int, cfg: RunConfig):
    kernels = kernel_bank(cfg.kernel_size, cfg.sigma_major)
    rows = []
    for n in sizes:
        white = np.random.default_rng(seed).random((n, n, n)) < density
        volume = BinaryVolume(white)
        for mode in modes:
            if mode == "oracle" and n > oracle_max:
                continue
            t0 = time.perf_counter()
            amf_field(volume, kernels, mode, cfg.workers)
            rows.append({"size": n, "mode": mode, "n_white": int(white.sum()),
                         "kernels": len(kernels), "kernel_size": cfg.kernel_size,
                         "seconds": time.perf_counter() - t0})
    return rows


def cmd_bench(args):
    cfg = _config(args)
    with stage("bench"):
        rows = run_bench(args.sizes, args.modes, args.oracle_max, args.density, args.seed, cfg)
        out = open(args.out, "w", newline="") if args.out else sys.stdout
        try:
            writer = csv.DictWriter(out, ["size", "mode", "n_white", "kernels", "kernel_size", "seconds"],
                                    lineterminator="\n")
            writer.writeheader()
            for r in rows:
                writer.writerow(dict(r, seconds=f"{r['seconds']:.4f}"))
        finally:
            if args.out:
                out.close()


# --------------------------------------------------------------------------

def _int_list(text: str):
    return [int(v) for v in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amfkit", description="Anisotropic Minkowski functional features "
                                "and failure-load regression for 3-D voxel volumes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log stage records to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="flat key = value run configuration")
        sp.set_defaults(func=func)
        return sp

    sp = add("phantom", cmd_phantom, "generate a synthetic volume or cohort")
    sp.add_argument("--kind", default="rods", choices=KINDS)
    sp.add_argument("--size", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--orientation", type=_vec)
    sp.add_argument("--radius", type=float)
    sp.add_argument("--thickness", type=float)
    sp.add_argument("--spacing", type=float)
    sp.add_argument("--major-radius", dest="major_radius", type=float)
    sp.add_argument("--volume-fraction", dest="volume_fraction", type=float)
    sp.add_argument("--box", type=_vec)
    sp.add_argument("--noise", type=float, default=0.0, help="gray-level noise sigma (mg/cm^3)")
    sp.add_argument("--cohort", type=int, help="write a synthetic cohort of this many specimens instead")
    sp.add_argument("--out", required=True)

    sp = add("kernel", cmd_kernel, "export one oriented kernel as a volume")
    sp.add_argument("--dir", type=int, required=True, help="direction index 0..12")
    sp.add_argument("--size", type=int)
    sp.add_argument("--sigma-major", dest="sigma_major", type=float)
    sp.add_argument("--dump", required=True)

    sp = add("calibrate", cmd_calibrate, "HU -> BMD (mg/cm^3) and clamp to [-200, 1200]")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--hu-water", dest="hu_water", type=float)
    sp.add_argument("--hu-bone", dest="hu_bone", type=float)
    sp.add_argument("--out", required=True)

    sp = add("binarize", cmd_binarize, "threshold a BMD volume inside the VOI")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--mask")
    sp.add_argument("--out", required=True)

    sp = add("amf", cmd_amf, "13 x 4 anisotropic Minkowski response field")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--mode", choices=("fast", "oracle"))
    sp.add_argument("--out", required=True)

    sp = add("anisotropy", cmd_anisotropy, "FA / theta / phi maps from a response field")
    sp.add_argument("--responses", required=True)
    sp.add_argument("--out", required=True)

    sp = add("features", cmd_features, "histogram features for one or more specimens")
    sp.add_argument("--specimen", nargs=3, action="append", required=True,
                    metavar=("ID", "MAPS", "BMD"))
    sp.add_argument("--out", required=True)

    sp = add("evaluate", cmd_evaluate, "repeated-split regression report from a feature CSV")
    sp.add_argument("--features", required=True)
    sp.add_argument("--targets", required=True)
    sp.add_argument("--out", default=".")

    sp = add("pipeline", cmd_pipeline, "run every stage end to end")
    sp.add_argument("--out")
    sp.add_argument("--in", dest="input")
    sp.add_argument("--mode", choices=("fast", "oracle"))

    sp = add("bench", cmd_bench, "time the AMF field in fast and oracle mode")
    sp.add_argument("--sizes", type=_int_list, default=[16, 24, 32, 64])
    sp.add_argument("--modes", type=lambda s: s.split(","), default=["fast", "oracle"])
    sp.add_argument("--oracle-max", dest="oracle_max", type=int, default=32)
    sp.add_argument("--density", type=float, default=0.3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"amfkit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        cause = exc.__cause__
        if isinstance(cause, ConfigMismatchError):
            print(f"amfkit: {exc}", file=sys.stderr)
            return EXIT_MISMATCH
        if isinstance(cause, ConfigError):
            print(f"amfkit: config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"amfkit: stage failed: {exc}", file=sys.stderr)
        return STAGE_EXIT.get(exc.stage, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
