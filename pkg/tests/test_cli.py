import filecmp
import json
import os

import numpy as np
import pytest

from scatlab.cli import main
from scatlab.crosssec import CrossSectionReport
from scatlab.patches import PatchPartition


def test_unknown_experiment_exits_3(capsys):
    assert main(["run", "nosuch"]) == 3
    assert "unknown name" in capsys.readouterr().err


def test_bad_config_exits_3(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "stationary", "--config", str(bad)]) == 3
    assert "not valid JSON" in capsys.readouterr().err

    notdict = tmp_path / "list.json"
    notdict.write_text("[1, 2]")
    assert main(["run", "stationary", "--config", str(notdict)]) == 3

    # a non-object potential section survives the one-level merge and must be
    # caught by validation
    nokind = tmp_path / "nokind.json"
    nokind.write_text(json.dumps({"potential": [1, 2]}))
    assert main(["run", "stationary", "--config", str(nokind)]) == 3
    assert "potential.kind" in capsys.readouterr().err


def test_missing_config_file_exits_3(tmp_path, capsys):
    assert main(["run", "stationary", "--config", str(tmp_path / "gone.json")]) == 3


def _run_stationary(tmp_path, name, threads):
    cfg = tmp_path / "cfg.json"
    # shrink the well scan so the run stays quick
    cfg.write_text(json.dumps({
        "n_theta_scan": 61,
        "well": {"v0": -1.0, "range": 1.0, "k_list": [0.5, 2.0]},
    }))
    out = tmp_path / name
    rc = main(["run", "stationary", "--config", str(cfg),
               "--out", str(out), "--threads", str(threads)])
    assert rc == 0
    return out


def test_run_writes_manifest_and_artifacts(tmp_path, capsys):
    out = _run_stationary(tmp_path, "run1", 1)
    assert "artifacts in" in capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["experiment"] == "stationary"
    assert "amplitudes.csv" in manifest["artifacts"]
    assert "summary.json" in manifest["artifacts"]
    assert manifest["versions"]["scatlab"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["sup_rel_intensity_diff"] < summary["born_parameter"]


def test_thread_count_does_not_change_bytes(tmp_path):
    a = _run_stationary(tmp_path, "t1", 1)
    b = _run_stationary(tmp_path, "t8", 8)
    for name in sorted(os.listdir(a)):
        assert filecmp.cmp(a / name, b / name, shallow=False), name


def _write_report(path, partition, values):
    rep = CrossSectionReport(partition, 8.0, {"sigma_momentum": values})
    rep.write_csv(path)


def test_compare_pass_and_fail(tmp_path, capsys):
    part = PatchPartition(n_theta=4, n_phi=2)
    v = np.linspace(0.1, 0.8, part.n_patches)
    pa = tmp_path / "a.csv"
    pb = tmp_path / "b.csv"
    pc = tmp_path / "c.csv"
    _write_report(pa, part, v)
    _write_report(pb, part, v * 1.001)
    _write_report(pc, part, v * 1.5)
    assert main(["compare", str(pa), str(pb)]) == 0
    out = capsys.readouterr().out
    assert "pass" in out
    assert main(["compare", str(pa), str(pc)]) == 2
    assert "FAIL" in capsys.readouterr().out


def test_compare_mismatched_partitions_exit_3(tmp_path):
    pa = tmp_path / "a.csv"
    pb = tmp_path / "b.csv"
    _write_report(pa, PatchPartition(n_theta=4, n_phi=2),
                  np.ones(8))
    _write_report(pb, PatchPartition(n_theta=2, n_phi=2),
                  np.ones(4))
    assert main(["compare", str(pa), str(pb)]) == 3
