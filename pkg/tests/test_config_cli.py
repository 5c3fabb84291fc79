import hashlib
import json

import numpy as np
import pytest

from cauchy_stokes.cli import main, plan, run
from cauchy_stokes.config import Config, ConfigError, parse_config, parse_text
from cauchy_stokes.mesh import DomainKind


# ---------------------------------------------------------------------------
# config parsing

def test_grid_n_parsed():
    assert parse_text("grid.n = 32").n == 32


def test_annulus_divisibility_rejected_with_line():
    text = "domain.kind = square_annulus\n# comment\ngrid.n = 7\n"
    with pytest.raises(ConfigError) as info:
        parse_text(text, "run.cfg")
    assert info.value.code == "value-out-of-range"
    assert "run.cfg:3" in str(info.value)
    assert "grid.n" in str(info.value)


def test_eps_list_three_entries():
    cfg = parse_text("eps.list = 1e-2,1e-4,1e-6")
    assert len(cfg.eps_list) == 3
    assert sorted(cfg.eps_list, reverse=True) == [1e-2, 1e-4, 1e-6]


def test_unknown_key_names_key_and_line():
    with pytest.raises(ConfigError) as info:
        parse_text("grid.n = 16\ngrid.m = 4\n", "x.cfg")
    assert info.value.code == "unknown-key"
    assert "x.cfg:2" in str(info.value) and "grid.m" in str(info.value)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(ConfigError) as info:
        parse_config(tmp_path / "absent.cfg")
    assert info.value.code == "io-error"


def test_bad_number_is_out_of_range():
    with pytest.raises(ConfigError) as info:
        parse_text("grid.n = sixteen")
    assert info.value.code == "value-out-of-range"


def test_square_accepts_n_not_divisible_by_8():
    cfg = parse_text("domain.kind = unit_square\ngrid.n = 12")
    assert cfg.domain_kind is DomainKind.UNIT_SQUARE and cfg.n == 12


@pytest.mark.parametrize("line", ["case.name = MS1+MS1", "case.name = MS9",
                                  "eps.list = 1e-2, -1e-4", "robin.kappa_run = 0.5, 0.25",
                                  "solver.method = lu", "study.levels = 16"])
def test_invalid_values_rejected(line):
    with pytest.raises(ConfigError) as info:
        parse_text(line)
    assert info.value.code == "value-out-of-range"


def test_comments_and_blank_lines():
    cfg = parse_text("\n# header\ngrid.n = 16   # trailing\n\ncase.name = ms1\n")
    assert cfg.n == 16 and cfg.case == "MS1"


# ---------------------------------------------------------------------------
# command line

def _write(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text)
    return str(p)


def test_unknown_command_exit_1(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage:" in capsys.readouterr().err


def test_missing_command_exit_1(capsys):
    assert main([]) == 1
    assert "usage:" in capsys.readouterr().err


def test_bad_config_exit_1(tmp_path, capsys):
    cfg = _write(tmp_path, "grid.n = 7\n")
    assert main(["qr", "--config", cfg]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "value-out-of-range" in err[0]


def test_dry_run_does_no_work(tmp_path, capsys):
    cfg = _write(tmp_path, "grid.n = 16\ncase.name = MS2\neps.list = 1e-2,1e-4\n")
    out = tmp_path / "out"
    assert main(["qr", "--config", cfg, "--out", str(out), "--dry-run"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["n"] == 16 and info["sparse_factorizations"] == 2
    assert not out.exists()


def test_dry_run_kv_on_square_is_error(capsys):
    cfg = Config(domain_kind=DomainKind.UNIT_SQUARE, n=16)
    assert run("kv", cfg, dry_run=True) == 1


def test_plan_state_size():
    info = plan("forward", Config(n=16))
    assert info["state_unknowns"] == 3 * info["nodes"]


def test_qr_ms0_all_zero(tmp_path):
    cfg = _write(tmp_path, "grid.n = 16\ncase.name = MS0\neps.list = 1e-2,1e-4\n")
    out = tmp_path / "out"
    assert main(["qr", "--config", cfg, "--out", str(out)]) == 0
    csvs = sorted(out.glob("qr_state_*.csv"))
    assert len(csvs) == 2
    for f in csvs:
        data = np.loadtxt(f, delimiter=",", skiprows=1)
        assert data.shape[1] == 7 and np.all(data[:, 4:] == 0.0)


def test_manifest_hashes_match(tmp_path):
    cfg = _write(tmp_path, "grid.n = 16\ncase.name = MS1\neps.list = 1e-2,1e-3\n")
    out = tmp_path / "out"
    assert main(["qr", "--config", cfg, "--out", str(out)]) in (0, 2)
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "qr" and man["config"]["n"] == 16
    names = {f["name"] for f in man["files"]}
    assert names == {p.name for p in out.iterdir()} - {"manifest.json"}
    for f in man["files"]:
        data = (out / f["name"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == f["sha256"] and len(data) == f["bytes"]
    assert "wall_s" in man["timings"]


def test_exit_code_follows_flags(tmp_path):
    cfg = _write(tmp_path, "grid.n = 16\ncase.name = MS0\neps.list = 1e-2,1e-4\n")
    out = tmp_path / "out"
    code = main(["qr", "--config", cfg, "--out", str(out)])
    man = json.loads((out / "manifest.json").read_text())
    assert code == man["exit_code"] == (0 if man["flags_passed"] else 2)
