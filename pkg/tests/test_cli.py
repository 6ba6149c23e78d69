import json
import shutil

import numpy as np
import pytest

from amfkit.cli import EXIT_CONFIG, EXIT_MISMATCH, STAGE_EXIT, main
from amfkit.config import ConfigError, ConfigMismatchError, RunConfig, check_hashes, parse_config
from amfkit.features import read_features_csv
from amfkit.volume_io import load_volume, read_config_hash

SMOKE = """\
cohort_n = 20
cohort_size = 12
kernel_size = 5
sigma_major = 1.5
n_iter = 10
"""


# --- config --------------------------------------------------------------------

def test_config_defaults():
    c = RunConfig()
    assert (c.kernel_size, c.threshold, c.bins, c.n_iter, c.train_fraction) == (17, 400.0, 16, 50, 0.8)
    assert c.cohort_n == 150


def test_config_roundtrip():
    c = parse_config(SMOKE + "include_background = true\n# comment\n\nmode = oracle  # trailing\n")
    assert c.kernel_size == 5 and c.include_background and c.mode == "oracle"
    assert parse_config(c.to_text()) == c


@pytest.mark.parametrize("text", ["nonsense = 1", "kernel_size = 4", "mode = turbo", "bins 16",
                                  "train_fraction = 1.5", "include_background = maybe", "n_iter = x"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_hash_scope():
    base = RunConfig()
    assert base.hash() == base.replace(output_dir="/elsewhere", workers=4, input_dir="x",
                                       keep_intermediates=True).hash()
    assert base.hash() != base.replace(threshold=401.0).hash()
    assert base.hash() != base.replace(mode="oracle").hash()
    assert len(base.hash()) == 64


def test_check_hashes():
    check_hashes("a", x="a", y=None)
    check_hashes(None, x="a", y="a")
    with pytest.raises(ConfigMismatchError):
        check_hashes("a", x="b")
    with pytest.raises(ConfigMismatchError):
        check_hashes(None, x="a", y="b")


# --- CLI -----------------------------------------------------------------------

@pytest.fixture
def smoke_cfg(tmp_path):
    p = tmp_path / "smoke.cfg"
    p.write_text(SMOKE)
    return p


def test_unknown_flag_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["amf", "--bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_exit_codes_distinct():
    codes = set(STAGE_EXIT.values())
    assert 2 not in codes and EXIT_CONFIG not in codes and EXIT_MISMATCH not in codes
    assert len({2, EXIT_CONFIG, EXIT_MISMATCH}) == 3


def test_bad_config_exit(tmp_path):
    (tmp_path / "bad.cfg").write_text("threshold = high\n")
    assert main(["pipeline", "--config", str(tmp_path / "bad.cfg")]) == EXIT_CONFIG
    assert main(["pipeline", "--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_stage_failure_exit(tmp_path):
    assert main(["amf", "--in", str(tmp_path / "none.vol.json"), "--out", str(tmp_path / "r.bin")]) \
        == STAGE_EXIT["amf"]


def test_phantom_and_kernel(tmp_path):
    assert main(["phantom", "--kind", "rods", "--size", "16", "--seed", "7", "--out", str(tmp_path / "p")]) == 0
    manifest = json.loads((tmp_path / "p" / "manifest.json").read_text())
    assert manifest["spec"]["kind"] == "rods" and manifest["spec"]["seed"] == 7
    assert load_volume(tmp_path / "p" / "volume.vol.json").dims == (16, 16, 16)
    assert main(["kernel", "--dir", "12", "--dump", str(tmp_path / "k")]) == 0
    k = load_volume(tmp_path / "k.vol.json")
    assert k.dims == (17, 17, 17) and abs(k.data.sum() - 1) < 1e-9
    assert main(["kernel", "--dir", "13", "--dump", str(tmp_path / "k2")]) == STAGE_EXIT["kernel"]


def _stagewise(tmp_path, cfg_path, cohort_dir, out):
    """Drive every per-specimen stage through the CLI, then evaluate."""
    out.mkdir()
    cfg = ["--config", str(cfg_path)]
    targets = cohort_dir / "targets.csv"
    ids = [line.split(",")[0] for line in targets.read_text().splitlines()[1:]]
    spec_args = []
    for sid in ids:
        d = out / sid
        assert main(["calibrate", *cfg, "--in", str(cohort_dir / f"{sid}.vol.json"), "--out", str(d) + ".bmd"]) == 0
        assert main(["binarize", *cfg, "--in", str(d) + ".bmd.vol.json", "--out", str(d) + ".bin"]) == 0
        assert main(["amf", *cfg, "--in", str(d) + ".bin.vol.json", "--out", str(d) + ".responses.bin"]) == 0
        assert main(["anisotropy", *cfg, "--responses", str(d) + ".responses.bin", "--out", str(d) + ".maps"]) == 0
        spec_args += ["--specimen", sid, str(d) + ".maps.vol.json", str(d) + ".bmd.vol.json"]
    assert main(["features", *cfg, *spec_args, "--out", str(out / "features.csv")]) == 0
    assert main(["evaluate", *cfg, "--features", str(out / "features.csv"), "--targets", str(targets),
                 "--out", str(out)]) == 0


def test_stage_composition_equals_pipeline(tmp_path, smoke_cfg):
    assert main(["pipeline", "--config", str(smoke_cfg), "--out", str(tmp_path / "run")]) == 0
    run = tmp_path / "run"
    _stagewise(tmp_path, smoke_cfg, run / "cohort", tmp_path / "stages")
    for name in ("features.csv", "report.json", "report.csv"):
        assert (run / name).read_bytes() == (tmp_path / "stages" / name).read_bytes(), name
    # intermediate artifacts carry the config hash
    h = RunConfig().replace(**parse_config(SMOKE).__dict__).hash()
    assert read_config_hash(tmp_path / "stages" / "spec000.bin.vol.json") == h
    assert json.loads((run / "report.json").read_text())["config_hash"] == h


def test_evaluate_alone_reproduces_report(tmp_path, smoke_cfg):
    run = tmp_path / "run"
    assert main(["pipeline", "--config", str(smoke_cfg), "--out", str(run)]) == 0
    assert main(["evaluate", "--config", str(smoke_cfg), "--features", str(run / "features.csv"),
                 "--targets", str(run / "cohort" / "targets.csv"), "--out", str(tmp_path / "ev")]) == 0
    assert (run / "report.json").read_bytes() == (tmp_path / "ev" / "report.json").read_bytes()
    report = json.loads((run / "report.json").read_text())
    assert len(report["rows"]) == 13 and report["rows"][0]["baseline"]


def test_mismatched_config_refused(tmp_path, smoke_cfg):
    run = tmp_path / "run"
    assert main(["pipeline", "--config", str(smoke_cfg), "--out", str(run)]) == 0
    other = tmp_path / "other.cfg"
    other.write_text(SMOKE + "threshold = 450\n")
    code = main(["evaluate", "--config", str(other), "--features", str(run / "features.csv"),
                 "--targets", str(run / "cohort" / "targets.csv"), "--out", str(tmp_path / "ev")])
    assert code == EXIT_MISMATCH
    assert not (tmp_path / "ev" / "report.json").exists()
    # stage inputs are checked too
    main(["calibrate", "--config", str(smoke_cfg), "--in", str(run / "cohort" / "spec000.vol.json"),
          "--out", str(tmp_path / "b")])
    assert main(["binarize", "--config", str(other), "--in", str(tmp_path / "b.vol.json"),
                 "--out", str(tmp_path / "bin")]) == EXIT_MISMATCH


def test_workers_independent(tmp_path):
    (tmp_path / "a.cfg").write_text(SMOKE)
    (tmp_path / "b.cfg").write_text(SMOKE + "workers = 2\n")
    assert main(["pipeline", "--config", str(tmp_path / "a.cfg"), "--out", str(tmp_path / "a")]) == 0
    assert main(["pipeline", "--config", str(tmp_path / "b.cfg"), "--out", str(tmp_path / "b")]) == 0
    for name in ("features.csv", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_oracle_mode_smoke_matches_fast(tmp_path):
    cfg = tmp_path / "o.cfg"
    cfg.write_text("cohort_n = 20\ncohort_size = 16\nkernel_size = 7\nsigma_major = 2.0\nn_iter = 10\n")
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "fast")]) == 0
    shutil.copytree(tmp_path / "fast" / "cohort", tmp_path / "cohort")
    assert main(["pipeline", "--config", str(cfg), "--mode", "oracle", "--in", str(tmp_path / "cohort"),
                 "--out", str(tmp_path / "oracle")]) == 0
    f = read_features_csv(tmp_path / "fast" / "features.csv")
    o = read_features_csv(tmp_path / "oracle" / "features.csv")
    assert f.config_hash != o.config_hash
    assert np.abs(f.values - o.values).max() <= 1e-6
    rf = json.loads((tmp_path / "fast" / "report.json").read_text())["rows"]
    ro = json.loads((tmp_path / "oracle" / "report.json").read_text())["rows"]
    for a, b in zip(rf, ro):
        assert abs(a["rmse_mean"] - b["rmse_mean"]) <= 1e-6


def test_keep_intermediates(tmp_path):
    cfg = tmp_path / "k.cfg"
    cfg.write_text(SMOKE + "keep_intermediates = true\n")
    assert main(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "k")]) == 0
    inter = tmp_path / "k" / "intermediates"
    assert (inter / "spec000.responses.bin").exists() and (inter / "spec000.maps.vol.json").exists()


def test_bench_csv(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--sizes", "8,10", "--oracle-max", "8", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "size,mode,n_white,kernels,kernel_size,seconds"
    assert [tuple(l.split(",")[:2]) for l in lines[1:]] == [("8", "fast"), ("8", "oracle"), ("10", "fast")]
