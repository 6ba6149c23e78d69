"""End-to-end orchestration: calibrate -> binarize -> AMF -> anisotropy -> features -> evaluate."""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Optional

import numpy as np

from .anisotropy import AnisotropyMap, anisotropy_map
from .config import RunConfig, check_hashes
from .features import (FeatureTable, FeatureVector, NoWhiteVoxelsError, default_specs,
                       extract_features, feature_set_names, read_features_csv,
                       write_features_csv, write_features_json)
from .kernelgen import kernel_bank
from .minkowski import FUNCTIONALS, amf_field, save_responses
from .phantom import gen_cohort, read_targets_csv, write_cohort
from .regression import EvaluationReport, evaluation_report
from .volume_io import (GrayVolume, VoiMask, binarize, clamp_bmd, hu_to_bmd, load_components,
                        load_volume, save_components, save_volume)

log = logging.getLogger("amfkit")

STAGES = ("phantom", "kernel", "calibrate", "binarize", "amf", "anisotropy", "features", "evaluate")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


@contextmanager
def stage(name: str, **info):
    """Run a block as a named stage: one JSON log line on success, StageError on failure."""
    t0 = time.perf_counter()
    try:
        yield info
    except StageError:
        raise
    except Exception as exc:
        log.error(json.dumps({"stage": name, "status": "error", "error": str(exc)}))
        raise StageError(name, str(exc)) from exc
    log.info(json.dumps({"stage": name, "status": "ok",
                         "elapsed_s": round(time.perf_counter() - t0, 4), **info}, default=str))


def voi_mask(cfg: RunConfig, dims) -> VoiMask:
    return VoiMask.sphere(dims, cfg.voi_scale) if cfg.voi == "sphere" else VoiMask.full(dims)


def calibrate(volume: GrayVolume, cfg: RunConfig) -> GrayVolume:
    if volume.unit == "HU":
        volume = hu_to_bmd(volume, cfg.calibration())
    return clamp_bmd(volume)


def specimen_features(specimen_id: str, volume: GrayVolume, cfg: RunConfig,
                      keep_dir: Optional[Path] = None) -> FeatureVector:
    """All per-specimen stages; intermediates written to `keep_dir` when given."""
    h = cfg.hash()
    bmd = calibrate(volume, cfg)
    mask = voi_mask(cfg, bmd.dims)
    binary = binarize(bmd, cfg.threshold, mask)
    field = amf_field(binary, kernel_bank(cfg.kernel_size, cfg.sigma_major), cfg.mode)
    maps = anisotropy_map(field)
    if keep_dir is not None:
        keep_dir.mkdir(parents=True, exist_ok=True)
        save_volume(bmd, keep_dir / f"{specimen_id}.bmd", config_hash=h)
        save_volume(binary, keep_dir / f"{specimen_id}.bin", config_hash=h)
        save_responses(field, keep_dir / f"{specimen_id}.responses.bin", h)
        save_maps(maps, keep_dir / f"{specimen_id}.maps", config_hash=h)
    return extract_features(maps, bmd, mask, default_specs(cfg.bins), specimen_id,
                            cfg.include_background)


def save_maps(maps: AnisotropyMap, path, config_hash: Optional[str] = None):
    """12 scalar fields (functional x FA/theta/phi) plus the white mask, one file."""
    fields = {}
    for f in FUNCTIONALS:
        for q in ("fa", "theta", "phi"):
            fields[f"{f}_{q}"] = maps.quantity(q, f)
    fields["white"] = maps.white.astype(np.float64)
    return save_components(fields, path, config_hash=config_hash)


def load_maps(path):
    comps, header = load_components(path)
    stack = {q: np.stack([comps[f"{f}_{q}"] for f in FUNCTIONALS], axis=-1) for q in ("fa", "theta", "phi")}
    return AnisotropyMap(stack["fa"], stack["theta"], stack["phi"], comps["white"] > 0.5), header.get("config_hash")


def _specimen_job(args):
    sid, path, cfg, keep = args
    try:
        return sid, specimen_features(sid, load_volume(path), cfg, keep), None
    except NoWhiteVoxelsError as exc:
        return sid, None, str(exc)


def discover_specimens(input_dir: Path) -> tuple[list[tuple[str, Path]], dict[str, float]]:
    targets = read_targets_csv(input_dir / "targets.csv")
    found = []
    for sid in sorted(targets):
        path = input_dir / f"{sid}.vol.json"
        if not path.exists():
            raise FileNotFoundError(f"no volume for specimen {sid} ({path})")
        found.append((sid, path))
    return found, targets


def compute_features(cfg: RunConfig, input_dir: Path, keep_dir: Optional[Path] = None) -> FeatureTable:
    specimens, _ = discover_specimens(input_dir)
    jobs = [(sid, path, cfg, keep_dir) for sid, path in specimens]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_specimen_job, jobs))
    else:
        results = [_specimen_job(j) for j in jobs]
    vectors = []
    for sid, vec, err in results:
        if vec is None:
            log.warning(json.dumps({"stage": "features", "excluded": sid, "reason": err}))
        else:
            vectors.append(vec)
    return FeatureTable.from_vectors(vectors, cfg.bins, cfg.hash())


def evaluate_table(table: FeatureTable, targets: dict[str, float], cfg: RunConfig) -> EvaluationReport:
    check_hashes(cfg.hash(), features=table.config_hash)
    missing = [sid for sid in table.ids if sid not in targets]
    if missing:
        raise KeyError(f"no failure load for specimens {missing[:5]}")
    y = np.array([targets[sid] for sid in table.ids])
    sets = {name: table.set_matrix(name) for name in feature_set_names()}
    return evaluation_report(sets, y, cfg.evaluation(), cfg.hash())


def write_report(report: EvaluationReport, outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(outdir / "report.csv", "w", newline="") as fh:
        fh.write(f"# config_hash={report.config_hash}\n")
        csv.writer(fh, lineterminator="\n").writerows(report.csv_rows())


def run_pipeline(cfg: RunConfig) -> EvaluationReport:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    if cfg.input_dir:
        input_dir = Path(cfg.input_dir)
    else:
        with stage("phantom", n=cfg.cohort_n, size=cfg.cohort_size):
            input_dir = write_cohort(gen_cohort(cfg.cohort()), out / "cohort")
    keep = out / "intermediates" if cfg.keep_intermediates else None
    with stage("features", mode=cfg.mode) as info:
        table = compute_features(cfg, input_dir, keep)
        write_features_csv(table, out / "features.csv")
        write_features_json(table, out / "features.json", provenance={
            "kernel_size": cfg.kernel_size, "sigma_major": cfg.sigma_major,
            "axis_ratio": 4.0, "threshold": cfg.threshold, "bins": cfg.bins,
            "include_background": cfg.include_background, "voi": cfg.voi})
        info["specimens"] = len(table.ids)
    with stage("evaluate") as info:
        report = evaluate_table(read_features_csv(out / "features.csv"),
                                read_targets_csv(input_dir / "targets.csv"), cfg)
        write_report(report, out)
        info["best"] = report.best.feature_set
    return report
