import csv

import yaml

from poriferous.cli import main

from conftest import config


def test_cli_map_partition_run_analyze(tmp_path, capsys):
    cfg = config("holes6", K_star=1, T_eps=3.0, faults={10: [4, 5, 6]}, snapshot_every=10)
    cfg.dump(tmp_path / "c.yaml")
    c = str(tmp_path / "c.yaml")

    assert main(["map", "--config", c, "--out", str(tmp_path / "map")]) == 0
    mapped = str(tmp_path / "map" / "mapped.npz")
    assert (tmp_path / "map" / "mapping.png").stat().st_size > 0

    assert main(["partition", "--config", c, "--out", str(tmp_path / "part"), "--mapped", mapped,
                 "--phases", "0,1,2,3,4,5"]) == 0
    assert (tmp_path / "part" / "partition.png").exists()

    out = tmp_path / "run"
    assert main(["run", "--config", c, "--out", str(out), "--mapped", mapped, "--seed", "3", "--fault", "12:1,2"]) == 0
    used = yaml.safe_load((out / "config_used.yaml").read_text())
    assert used["seed"] == 3 and used["faults"] == {"12": [1, 2]}
    rows = list(csv.reader((out / "metrics.csv").open()))
    assert rows[0][:2] == ["step", "J"] and len(rows) > 10
    for name in ("summary.yaml", "workloads.png", "final_partition.png"):
        assert (out / name).exists()

    capsys.readouterr()
    assert main(["analyze", "--run", str(out)]) == 0
    rep = yaml.safe_load(capsys.readouterr().out)
    assert "N_max" in rep and rep["spectral"]["lambda2"] >= rep["spectral"]["bound"] - 1e-12


def test_cli_reports_errors(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("nonsense: 1\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "unknown config keys" in capsys.readouterr().err
