import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from agediffusion.cli import CSV_HEADER, load_scenario, main
from agediffusion.errors import ValidationError

ZERO = """[problem]
T = 1
a_max = 1
[grids]
n_a = 16
K = 8
n_x = 16
fd_delta_t = 0.0625
[data]
u0 = 0
[output]
slices = 0.5, 1
age_step = 0.25
x_points = 5
[compare]
sample = 0.25
"""

FLUX = """[problem]
T = 1
a_max = 1
[grids]
n_a = 128
K = 32
n_x = 128
[data]
u0 = exp(-a) * x^2
f = -2 * exp(-(t+a)) * (x^2 + 1)
g = exp(-t) * x^2
h1 = 2 * exp(-(t+a))
exact = exp(-(t+a)) * x^2
[output]
slices = 0.25, 1
age_step = 0.25
x_points = 11
"""


def write(tmp_path, text, name="s.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_zero_scenario_solve_and_oracle(tmp_path):
    sc = write(tmp_path, ZERO)
    for cmd, name in (("solve", "solve.csv"), ("oracle", "oracle.csv")):
        assert main([cmd, "--scenario", sc, "--out", str(tmp_path)]) == 0
        rows = read_rows(tmp_path / name)
        assert tuple(rows[0]) == CSV_HEADER
        assert len(rows) == 1 + 2 * 5 * 5
        assert all(float(r[3]) == 0.0 for r in rows[1:])
        raw = (tmp_path / name).read_bytes()
        assert b"\r" not in raw and raw.endswith(b"\n")


def test_rows_are_ordered_by_age_then_x(tmp_path):
    sc = write(tmp_path, ZERO)
    main(["solve", "--scenario", sc, "--out", str(tmp_path)])
    rows = [tuple(map(float, r)) for r in read_rows(tmp_path / "solve.csv")[1:]]
    assert rows == sorted(rows, key=lambda r: (r[0], r[1], r[2]))


def test_solve_meta(tmp_path):
    main(["solve", "--scenario", write(tmp_path, ZERO), "--out", str(tmp_path)])
    meta = json.loads((tmp_path / "solve.meta.json").read_text())
    assert meta["t_equals_a_branch"] == "initial"
    assert {"grid", "tolerances", "versions"} <= set(meta)


def test_zero_scenario_compare(tmp_path, capsys):
    assert main(["compare", "--scenario", write(tmp_path, ZERO), "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "compare.meta.json").read_text())
    assert all(v == 0.0 for v in meta["results"].values())


def test_manufactured_solve_spot_checks(tmp_path):
    assert main(["solve", "--scenario", write(tmp_path, FLUX), "--out", str(tmp_path)]) == 0
    for t, a, x, u in [tuple(map(float, r)) for r in read_rows(tmp_path / "solve.csv")[1:]]:
        assert abs(u - np.exp(-(t + a)) * x ** 2) <= 3e-3


def test_manufactured_compare_passes(tmp_path, capsys):
    assert main(["compare", "--scenario", write(tmp_path, FLUX), "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "compare.meta.json").read_text())
    assert meta["results"]["mild vs fd, max"] <= 2e-2


def test_compare_fails_on_tight_bound(tmp_path, capsys):
    text = FLUX + "[compare]\nbound = 1e-12\n"
    assert main(["compare", "--scenario", write(tmp_path, text), "--out", str(tmp_path)]) == 1


def test_determinism_across_runs_and_threads(tmp_path):
    sc = write(tmp_path, FLUX)
    outs = []
    for i, threads in enumerate((1, 1, 3)):
        d = tmp_path / f"run{i}"
        assert main(["solve", "--scenario", sc, "--out", str(d), "--threads", str(threads)]) == 0
        outs.append((d / "solve.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]


@pytest.mark.parametrize("argv", [
    ["solve", "--scenario", "/nonexistent/file.ini"],
    ["verify", "nonsense"],
    ["fit", "nonsense"],
    ["bogus"],
    ["solve"],
    ["verify", "kappa", "--threads", "0"],
])
def test_input_errors_exit_2(argv, capsys):
    assert main(argv) == 2


def test_misaligned_grids_exit_2(tmp_path, capsys):
    bad_slice = ZERO.replace("slices = 0.5, 1", "slices = 0.3")
    assert main(["solve", "--scenario", write(tmp_path, bad_slice), "--out", str(tmp_path)]) == 2
    bad_fd = ZERO.replace("fd_delta_t = 0.0625", "fd_delta_t = 0.3")
    assert main(["oracle", "--scenario", write(tmp_path, bad_fd), "--out", str(tmp_path)]) == 2
    bad_t = ZERO.replace("T = 1", "T = 0.3")
    assert main(["solve", "--scenario", write(tmp_path, bad_t), "--out", str(tmp_path)]) == 2


def test_validation_names_the_inequality(tmp_path):
    bad = ZERO.replace("T = 1", "T = 1\np = 10\nq = 10")
    with pytest.raises(ValidationError, match=r"1 < \(1\+q\)/\(2q\) \+ 1/p"):
        load_scenario(write(tmp_path, bad))


def test_bad_expression_exits_2(tmp_path, capsys):
    bad = ZERO.replace("u0 = 0", "u0 = sin(")
    assert main(["solve", "--scenario", write(tmp_path, bad), "--out", str(tmp_path)]) == 2


def test_verify_kappa_prints_table(capsys):
    assert main(["verify", "kappa"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_fit_tb_singularity(capsys):
    assert main(["fit", "tb_singularity"]) == 0
    assert "PASS" in capsys.readouterr().out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "agediffusion", "verify", "unknown"], capture_output=True)
    assert res.returncode == 2
