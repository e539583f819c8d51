import json

import pytest

from lusinlab.cli import ConfigError, ExperimentConfig, load_config, main


def read_rows(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return lines[0].split(","), [l.split(",") for l in lines[1:]]


def test_geometry_exact(tmp_path):
    assert main(["geometry", "--n", "3", "--beta", "4", "--K", "2", "--out", str(tmp_path)]) == 0
    head, rows = read_rows(tmp_path / "geometry.csv")
    assert len(rows) == 3
    i, j = head.index("volume_A"), head.index("target_2n_alpha_n")
    assert all(r[i] == r[j] for r in rows)
    assert (tmp_path / "geometry.csv").read_text().startswith("# ")


def test_beta_gate(tmp_path, capsys):
    assert main(["geometry", "--n", "3", "--beta", "3", "--out", str(tmp_path)]) == 2
    assert "beta >= n+1" in capsys.readouterr().err


def test_p_warning(tmp_path, capsys):
    main(["geometry", "--n", "2", "--beta", "3", "--K", "1", "--p", "1", "--out", str(tmp_path)])
    assert "floor(n/2)" in capsys.readouterr().err


def test_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# profile\nn = 2\nbeta = 3\nK = 1\nperimeter_h = 1/128\n")
    assert load_config(cfg)["perimeter_h"] == pytest.approx(1 / 128)
    out = tmp_path / "o"
    assert main(["geometry", "--config", str(cfg), "--K", "2", "--out", str(out), "--gnuplot"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["K"] == 2 and summary["pass"]
    assert (out / "geometry.gp").exists()
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert main(["geometry", "--config", str(bad)]) == 2


def test_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(n=2, beta=3, K=11).validate()
    assert ExperimentConfig(n=3, beta=4, p=1.5).validate() == []


def test_lusin_n2(tmp_path):
    code = main(["lusin", "--n", "2", "--beta", "3", "--K", "3", "--out", str(tmp_path)])
    head, rows = read_rows(tmp_path / "lusin_report.csv")
    assert head[:4] == ["k", "upsilon", "image", "ratio"]
    assert len(rows) == 3 and code == 0


def test_phi_file(tmp_path):
    from lusinlab.energy import OrliczFunction
    f = tmp_path / "phi.json"
    f.write_text(OrliczFunction(1.0, [1.0, 2.0], [0.0, 1.0]).to_json())
    assert main(["energy", "--n", "2", "--beta", "3", "--K", "1", "--phi", str(f),
                 "--out", str(tmp_path)]) == 0
    assert main(["energy", "--n", "2", "--beta", "3", "--K", "1", "--phi", "nope.json",
                 "--out", str(tmp_path)]) == 2
