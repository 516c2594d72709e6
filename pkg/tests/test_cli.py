import subprocess
import sys

import pytest

from perturbvamp import cli, harness
from perturbvamp.solver import DivergenceError, Mode

MINIMAL = """\
# small smoke configuration
experiment = smoke
n = 40
trials = 1
max_iters = 6
"""


def _write(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_parse_config_rejects_unknown_and_duplicate():
    assert cli.parse_config("n = 5  # comment\n\n")["n"] == "5"
    with pytest.raises(cli.ConfigError, match="unknown"):
        cli.parse_config("size = 5\n")
    with pytest.raises(cli.ConfigError, match="duplicate"):
        cli.parse_config("n = 5\nn = 6\n")
    with pytest.raises(cli.ConfigError):
        cli.parse_config("n 5\n")


def test_defaults_are_announced():
    notes = []
    cfg = cli.resolve({"n": "64"}, notes.append)
    assert cfg["n"] == "64" and cfg["rho"] == "0.2"
    assert any("rho" in n for n in notes) and not any("'n'" in n or " n " in n for n in notes)


def test_minimal_config_runs(tmp_path, capsys):
    cfg = _write(tmp_path, MINIMAL)
    out = tmp_path / "out"
    assert cli.cmd_run(cfg, out, threads=1) == 0
    trace = (out / "trace.csv").read_text().splitlines()
    agg = (out / "aggregate.csv").read_text().splitlines()
    assert len(trace) == 1 + 3 * 6
    assert len(agg) == 1 + 3
    assert "note: rho not set" in capsys.readouterr().err
    manifest = (out / "manifest.txt").read_text()
    assert "seed = 0" in manifest and "# perturbvamp" in manifest


def test_rerun_and_manifest_reproduce_bytes(tmp_path):
    cfg = _write(tmp_path, MINIMAL + "snr_e_db = 15, 25\nseed = 4\n")
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert cli.cmd_run(cfg, a, threads=1) == 0
    assert cli.cmd_run(cfg, b, threads=2) == 0
    assert cli.cmd_run(a / "manifest.txt", c, threads=1) == 0
    for name in ("trace.csv", "aggregate.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()


def test_aggregate_rows_count_modes_times_grid(tmp_path):
    cfg = _write(tmp_path, MINIMAL + "snr_e_db = 10,20,30,40\nmodes = pi,pc\n")
    assert cli.cmd_run(cfg, tmp_path / "o", threads=1) == 0
    rows = (tmp_path / "o" / "aggregate.csv").read_text().splitlines()[1:]
    assert len(rows) == 2 * 4


def test_seed_and_modes_overrides(tmp_path):
    cfg = _write(tmp_path, MINIMAL)
    assert cli.cmd_run(cfg, tmp_path / "o", seed=9, threads=1, modes="oracle") == 0
    manifest = (tmp_path / "o" / "manifest.txt").read_text()
    assert "seed = 9" in manifest and "modes = oracle" in manifest
    rows = (tmp_path / "o" / "aggregate.csv").read_text().splitlines()[1:]
    assert len(rows) == 1 and rows[0].split(",")[1] == "oracle"


@pytest.mark.parametrize("bad", [
    "colour = red\n",
    "n = many\n",
    "modes = oracle,amp\n",
    "damping = 2\n",
    "perturbation.kind = toeplitz\n",
    "whitening = qr\n",
])
def test_config_errors_exit_2(tmp_path, bad, capsys):
    cfg = _write(tmp_path, MINIMAL.replace("n = 40\n", "") + bad)
    assert cli.cmd_run(cfg, tmp_path / "o", threads=1) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_io_errors_exit_4(tmp_path):
    assert cli.cmd_run(tmp_path / "missing.cfg", tmp_path / "o", threads=1) == cli.EXIT_IO
    cfg = _write(tmp_path, MINIMAL + f"coeff_path = {tmp_path / 'nope.txt'}\n")
    assert cli.cmd_run(cfg, tmp_path / "o", threads=1) == cli.EXIT_IO
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg = _write(tmp_path, MINIMAL, "ok.cfg")
    assert cli.cmd_run(cfg, blocker / "sub", threads=1) == cli.EXIT_IO


def test_coefficient_length_mismatch_exit_2(tmp_path):
    coeffs = tmp_path / "x.txt"
    harness.save_coefficients(coeffs, [1.0, 0.0, 2.0])
    cfg = _write(tmp_path, MINIMAL + f"coeff_path = {coeffs}\n")
    assert cli.cmd_run(cfg, tmp_path / "o", threads=1) == cli.EXIT_CONFIG


def test_divergence_only_exit_3(tmp_path, monkeypatch, capsys):
    def always_diverge(problem, prior, config, truth=None):
        raise DivergenceError(0, "state", [])

    monkeypatch.setattr(harness, "run", always_diverge)
    cfg = _write(tmp_path, MINIMAL)
    assert cli.cmd_run(cfg, tmp_path / "o", threads=1) == cli.EXIT_DIVERGED
    assert "diverged" in capsys.readouterr().err
    rows = (tmp_path / "o" / "aggregate.csv").read_text().splitlines()[1:]
    assert all(r.endswith(",0,1") for r in rows)


def test_demo_table_shape():
    table = cli.demo_table(seed=0, n=64, threads=1).splitlines()
    assert table[0].split() == ["iter", "oracle", "pi", "pc"]
    assert len(table) == 1 + 60 + 1
    assert table[-1].startswith("final")
    single = cli.demo_table(seed=0, modes=(Mode.ORACLE,), n=64, threads=1).splitlines()
    assert single[0].split() == ["iter", "oracle"]
    assert all(len(line.split()) == 2 for line in single)


def test_demo_seed_repeatable(capsys):
    assert cli.main(["demo", "--n", "64", "--seed", "3", "--threads", "1"]) == 0
    first = capsys.readouterr().out
    assert cli.main(["demo", "--n", "64", "--seed", "3", "--threads", "1"]) == 0
    assert capsys.readouterr().out == first


def test_demo_bad_modes():
    assert cli.cmd_demo(modes="fast", n=32, threads=1) == cli.EXIT_CONFIG


def test_default_demo_ordering():
    table = cli.demo_table(seed=0, threads=1).splitlines()
    assert len(table) == 62
    oracle, pi, pc = (float(v) for v in table[-1].split()[1:])
    assert oracle <= pc <= pi


def test_help_lists_config_keys():
    proc = subprocess.run([sys.executable, "-m", "perturbvamp", "run", "--help"],
                          capture_output=True, text=True, check=True)
    for key in ("perturbation.kind", "snr_e_db", "coeff_path", "gamma1_init"):
        assert key in proc.stdout
