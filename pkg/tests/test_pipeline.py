import filecmp
import json

import pytest

from hcdefect.config import ConfigError, validate_config
from hcdefect.pipeline import StageError, Workspace, golden_compare, load_golden, run_pipeline

SMALL = {"h_macro": 0.125, "L": 4.0, "eps_list": [0.5, 0.25], "n_theta": 2, "n_path": 5}


@pytest.fixture(scope="module")
def small_runs(tmp_path_factory):
    cfg = validate_config(SMALL)
    d = tmp_path_factory.mktemp("runs")
    return cfg, d, run_pipeline(cfg, d / "a"), run_pipeline(cfg, d / "b")


def test_outputs_present(small_runs):
    cfg, d, man, _ = small_runs
    names = {p.name for p in (d / "a").iterdir()}
    for f in ("cell_eigs.csv", "gaps.json", "ahom.json", "beta.csv", "limit_u0_0.csv",
              "limit_trace.csv", "limit_modes.json", "sweep.csv", "sweep.json", "u_eps_2.csv",
              "u_eps_4.csv", "bands_eps_2.csv", "bands_eps_4.csv", "spectra_compare.json",
              "manifest.json"):
        assert f in names
    assert not man.failed
    assert set(man.files) == names
    head = (d / "a" / "sweep.csv").read_text().splitlines()[0]
    assert head == "eps,lambda_eps,err_lambda,two_scale_err,alpha_fit,L,m,seconds"
    bhead = (d / "a" / "bands_eps_2.csv").read_text().splitlines()[0].split(",")
    assert bhead[:3] == ["theta1", "theta2", "lam1"]


def test_runs_are_byte_identical(small_runs):
    _, d, _, _ = small_runs
    names = sorted(p.name for p in (d / "a").iterdir())
    _, mismatch, errors = filecmp.cmpfiles(d / "a", d / "b", names, shallow=False)
    assert not mismatch and not errors


def test_manifest_contents(small_runs):
    cfg, d, man, _ = small_runs
    m = json.loads((d / "a" / "manifest.json").read_text())
    assert m["config_hash"] == cfg.hash()
    assert m["golden"] == {"applicable": False}
    assert m["stages"]["limit"]["cross_check_agree"]
    assert "a0" in m["defaults_applied"]


def test_downstream_skipped_after_failure(tmp_path):
    cfg = validate_config(dict(SMALL, dof_cap=100))
    with pytest.raises(StageError) as ei:
        run_pipeline(cfg, tmp_path)
    assert ei.value.stage == "sweep"
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["stages"]["sweep"]["status"] == "failed"
    assert m["stages"]["bands"]["status"] == "skipped"
    assert m["stages"]["cell"]["status"] == "ok"


def test_bad_gap_index_is_a_config_error(tmp_path):
    cfg = validate_config(dict(SMALL, gap_index=5))
    with pytest.raises(ConfigError):
        run_pipeline(cfg, tmp_path, stages=("cell",))


def test_cache_round_trip(tmp_path):
    cfg = validate_config(SMALL)
    a = Workspace(cfg, tmp_path)
    a.table()
    b = Workspace(cfg, tmp_path)
    assert (b.table().lambdas == a.table().lambdas).all()
    assert b.cache_hits["beta_table"] and not a.cache_hits["beta_table"]


def test_golden_matches_default_config():
    g = load_golden()
    cfg = validate_config({})
    assert g["config_hash"] == cfg.hash()
    out = golden_compare(cfg, {"lambda0": g["lambda0"] * (1 + 1e-6)})
    assert out["applicable"] and not out["ok"]
    assert golden_compare(cfg, {"gap_lo": g["gap_lo"]})["ok"]
