import json

import pytest

from sheetzero.cli import main
from sheetzero.config import parse_config
from sheetzero.errors import ConfigError, RegimeError


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_davis_config_valid():
    cfg = parse_config("[run]\nexperiment = davis\n[excursion]\nr = 1\nR = 4\na = 2 0\n")
    assert cfg.r == 1.0 and cfg.R == 4.0 and cfg.a == (2.0, 0.0)


def test_projection_rank_zero_rejected():
    with pytest.raises(RegimeError):
        parse_config("[run]\nexperiment = projection\n[sheet]\nN = 2\nd = 2\nrank = 0\n")


def test_surjectivity_regime_valid():
    cfg = parse_config("[run]\nexperiment = surjectivity\n[sheet]\nN = 2\nd = 1\nrank = 1\n")
    assert cfg.corank == 1


def test_excluded_case_rejected():
    with pytest.raises(RegimeError):
        parse_config("[run]\nexperiment = ehm\n[sheet]\nN = 1\nd = 2\n")


@pytest.mark.parametrize("text", [
    "[run]\nexperiment = davis\nbogus = 3\n",
    "[run]\nexperiment = davis\n[excursion]\nr = 1\n[other]\nr = 2\n",
    "[run]\nexperiment = nothing\n",
    "[run]\nexperiment = davis\n[excursion]\nr = one\n",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_cli_config_error_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "[run]\nexperiment = davis\nbogus = 3\n")
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 1
    assert "bogus" in capsys.readouterr().err


def test_dry_run_writes_manifest_only(tmp_path):
    cfg = write(tmp_path, "[run]\nexperiment = covariance\n")
    out = tmp_path / "o"
    assert main(["run", cfg, "--out", str(out), "--dry-run"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json"]
    m = json.loads((out / "manifest.json").read_text())
    assert m["dry_run"] and m["artifacts"] == []


def test_ehm_manifest_and_report(tmp_path, capsys):
    cfg = write(tmp_path, "[run]\nexperiment = ehm\n[sheet]\nN = 2\nd = 2\nlevel = 7\n[seeds]\nseeds = 1, 2\n")
    out = tmp_path / "o"
    code = main(["run", cfg, "--out", str(out)])
    m = json.loads((out / "manifest.json").read_text())
    assert m["summary"]["target"] == 1.0
    assert m["seeds"] == [1, 2]
    assert code in (0, 2, 3)
    assert main(["report", str(out)]) == code
    (out / m["artifacts"][0]["path"]).write_text("tampered\n")
    assert main(["report", str(out)]) == 2
    assert "MISMATCH" in capsys.readouterr().out


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, "[run]\nexperiment = lemma1\n[sheet]\nlevels = 6\n[excursion]\nreplicas = 500\n")
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", cfg, "--out", str(a)])
    main(["run", cfg, "--out", str(b), "--threads", "4"])
    for p in a.glob("*.csv"):
        assert p.read_bytes() == (b / p.name).read_bytes()


def test_master_seed_override(tmp_path):
    cfg = write(tmp_path, "[run]\nexperiment = covariance\n[seeds]\nseed_count = 3\n")
    out = tmp_path / "o"
    main(["run", cfg, "--out", str(out), "--seed", "9", "--dry-run"])
    first = json.loads((out / "manifest.json").read_text())["seeds"]
    main(["run", cfg, "--out", str(out), "--seed", "10", "--dry-run"])
    assert json.loads((out / "manifest.json").read_text())["seeds"] != first


def test_oracles(capsys):
    assert main(["oracle", "ehm", "--N", "2", "--d", "3"]) == 0
    assert capsys.readouterr().out.strip() == "0.5"
    assert main(["oracle", "davis", "--a", "2", "--r", "1", "--R", "4"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(0.5)
    assert main(["oracle", "covariance", "--s", "1,2", "--t", "2,1"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(1.0)
    assert main(["oracle", "gamma", "--b", "0,0"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(0.5)


def test_simulate_writes_file(tmp_path, capsys):
    assert main(["simulate", "--N", "2", "--d", "1", "--level", "4", "--out", str(tmp_path)]) == 0
    assert len(json.loads(capsys.readouterr().out)["sha256"]) == 64
    assert len(list(tmp_path.glob("*.bin"))) == 1


def test_onset_levels():
    from sheetzero.runner import onset_levels

    rows = [(1, 0.0, 2, 9), (1, 0.5, 3, 1), (1, 0.0, 4, 2), (2, 0.0, 2, 0), (2, 0.0, 3, 0), (3, 0.0, 2, 0), (3, 0.0, 3, 99)]
    assert onset_levels(rows, lambda n: n) == {1: 3, 2: 2, 3: None}
