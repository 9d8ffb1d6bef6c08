import hashlib
import math
from pathlib import Path

import numpy as np
import pytest

from cascade_opo import cli
from cascade_opo.config import ConfigError, format_config, parse_config, parse_config_text

MINIMAL = """\
variant = three_photon
units = scaled
k2_over_gamma1 = 0.2
gamma2_over_gamma1 = 0.4
epsilon = 1.59
n_max = 45
"""

SMALL = """\
[model]
variant = three_photon
units = scaled
k_over_gamma1 = 0.3
gamma2_over_gamma1 = 0.5
epsilon = 1.2

[hilbert]
n_max = 4

[trajectory]
dt = 0.001
t_final = 1.0
n_traj = 6
seed = 99
record_stride = 100
"""


def write(tmp_path, text, name="run.conf"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_config_accepted():
    cfg = parse_config_text(MINIMAL)
    assert cfg.cascade.k == 0.2 and cfg.cascade.gamma2 == 0.4
    assert cfg.cascade.epsilon == pytest.approx(1.59)
    assert cfg.hilbert.n_max_1 == cfg.hilbert.n_max_2 == 45


def test_si_units_are_rescaled():
    cfg = parse_config_text("""\
variant = four
units = si
gamma1 = 2.0e8
gamma2 = 3.0e8
chi = 4.0e4
k = 1.0e4
E_abs = 5000
n_max = 5
""")
    assert cfg.cascade.gamma1 == 1.0
    assert cfg.cascade.gamma2 == pytest.approx(1.5)
    assert cfg.cascade.chi == pytest.approx(2e-4)
    assert cfg.rate_scale == 2.0e8
    assert cfg.cascade.epsilon == pytest.approx(5000 / (3.0e8 / (2 * 4.0e4)))


@pytest.mark.parametrize("text,needle,line", [
    (MINIMAL.replace("units = scaled", "units = si\ngamma1 = 0\ngamma2 = 1\nchi = 1\nk = 1")
     .replace("k2_over_gamma1 = 0.2\ngamma2_over_gamma1 = 0.4\n", ""), "gamma1 must be positive", 3),
    (MINIMAL + "detuning = 0.1\n", "detuning", 7),
    (MINIMAL + "[model]\nn_max_1 = 3\n", "belongs in [hilbert]", 8),
    (MINIMAL.replace("epsilon = 1.59", "epsilon = fast"), "not a valid float", 5),
    (MINIMAL + "[bogus]\n", "unknown section", 7),
    (MINIMAL + "n_max = 3\n", "duplicate key", 7),
    (MINIMAL + "[trajectory]\ndt = -1\n", "dt must be positive", 8),
    (MINIMAL + "[grid]\npoints = 100\n", "odd", 8),
    (MINIMAL.replace("units = scaled", "units = furlongs"), "units must be", 2),
    (MINIMAL.replace("variant = three_photon", "variant = five"), "unknown variant", 1),
])
def test_rejections_carry_line_numbers(text, needle, line):
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text, "x.conf")
    assert needle in str(exc.value)
    assert f"x.conf:{line}:" in str(exc.value)
    assert exc.value.line == line


@pytest.mark.parametrize("drop,needle", [("units", "units"), ("epsilon", "epsilon"), ("n_max", "truncation")])
def test_missing_keys(drop, needle):
    text = "\n".join(l for l in MINIMAL.splitlines() if not l.startswith(drop))
    with pytest.raises(ConfigError, match=needle):
        parse_config_text(text)


def test_both_pump_keys_rejected():
    with pytest.raises(ConfigError, match="exactly one"):
        parse_config_text(MINIMAL + "E_abs = 1\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "nope.conf")


def test_format_round_trip():
    cfg = parse_config_text(SMALL + "[optics]\nomega = 1e15\nL = 0.1\n[run]\nangle = 1.0\n")
    again = parse_config_text(format_config(cfg))
    assert again == cfg


def run(*argv):
    return cli.main([str(a) for a in argv])


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def test_cli_trajectory_is_reproducible_from_manifest(tmp_path):
    conf = write(tmp_path, SMALL)
    assert run("trajectory", "--config", conf, "--out", tmp_path / "a") == 0
    assert run("trajectory", "--config", tmp_path / "a" / "manifest", "--out", tmp_path / "b") == 0
    assert run("trajectory", "--config", conf, "--out", tmp_path / "c", "--workers", 2) == 0
    ref = sha(tmp_path / "a" / "trajectory.csv")
    assert sha(tmp_path / "b" / "trajectory.csv") == ref == sha(tmp_path / "c" / "trajectory.csv")
    assert (tmp_path / "a" / "manifest").read_text() == (tmp_path / "b" / "manifest").read_text()
    header = (tmp_path / "a" / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,mean_n1,sem_n1,mean_n2,sem_n2,cum_jumps_1,cum_jumps_2"
    manifest = (tmp_path / "a" / "manifest").read_text()
    assert "seed = 99" in manifest and f"trajectory.csv = sha256:{ref}" in manifest


def test_cli_seed_override_changes_output(tmp_path):
    conf = write(tmp_path, SMALL)
    run("trajectory", "--config", conf, "--out", tmp_path / "a")
    run("trajectory", "--config", conf, "--out", tmp_path / "b", "--seed", 100, "--traj", 6)
    assert sha(tmp_path / "a" / "trajectory.csv") != sha(tmp_path / "b" / "trajectory.csv")
    assert "seed = 100" in (tmp_path / "b" / "manifest").read_text()


def test_cli_csv_floats_round_trip(tmp_path):
    conf = write(tmp_path, SMALL)
    run("scan", "--config", conf, "--out", tmp_path, "--eps-from", 0.9, "--eps-to", 1.3, "--eps-steps", 20)
    lines = (tmp_path / "scan.csv").read_text().splitlines()
    assert lines[0] == "eps,branch_id,n1,n2,phi1,phi2,stable,max_re_eig"
    for line in lines[1:]:
        for field in line.split(","):
            try:
                x = float(field)
            except ValueError:
                continue
            assert f"{x:.17g}" == field


def test_cli_scan_reports_hysteresis(tmp_path):
    conf = write(tmp_path, SMALL)
    assert run("scan", "--config", conf, "--out", tmp_path, "--eps-from", 0.9, "--eps-to", 1.2,
               "--eps-steps", 31) == 0
    rows = [l.split(",") for l in (tmp_path / "scan.csv").read_text().splitlines()[1:]]
    stable_upper = {float(r[0]) for r in rows if r[1].startswith("upper") and r[6] == "stable"}
    assert min(stable_upper) > 1.0
    assert "hysteresis_points" in (tmp_path / "manifest").read_text()


def test_cli_config_errors_exit_2(tmp_path, capsys):
    bad = write(tmp_path, MINIMAL + "detuning = 1\n")
    assert run("steady-state", "--config", bad, "--out", tmp_path) == 2
    assert "detuning" in capsys.readouterr().err
    good = write(tmp_path, SMALL, "good.conf")
    assert run("scan", "--config", good, "--out", tmp_path) == 2
    assert run("scan", "--config", good, "--out", tmp_path, "--eps-from", 2, "--eps-to", 1,
               "--eps-steps", 3) == 2
    assert run("steady-state", "--config", good) == 2


def test_cli_numerical_guard_exit_3(tmp_path, capsys):
    conf = write(tmp_path, SMALL.replace("n_max = 4", "n_max = 40"))
    assert run("master", "--config", conf, "--out", tmp_path) == 3
    assert "hint" in capsys.readouterr().err


def test_cli_strict_leakage_exit_3(tmp_path):
    conf = write(tmp_path, SMALL.replace("n_max = 4", "n_max = 2").replace("t_final = 1.0", "t_final = 4.0"))
    assert run("trajectory", "--config", conf, "--out", tmp_path / "lax") == 0
    assert run("trajectory", "--config", conf, "--out", tmp_path / "strict", "--strict-leakage") == 3


def test_cli_symmetry_check_and_wigner(tmp_path):
    conf = write(tmp_path, """\
variant = four_photon
units = scaled
k_over_gamma1 = 0.3
gamma2_over_gamma1 = 0.5
epsilon = 0.7
n_max = 5
""")
    assert run("symmetry-check", "--config", conf, "--out", tmp_path / "ok", "--mode", 2,
               "--angle", math.pi) == 0
    assert run("symmetry-check", "--config", conf, "--out", tmp_path / "bad", "--mode", 2,
               "--angle", 1.0) == 1
    assert run("symmetry-check", "--config", conf, "--out", tmp_path / "x", "--angle", 7) == 2
    assert run("wigner", "--config", conf, "--out", tmp_path / "w") == 0
    data = np.loadtxt(tmp_path / "w" / "wigner_mode1.csv", delimiter=",", skiprows=1)
    side = (tmp_path / "w" / "wigner_mode1.json").read_text()
    assert '"nx": 101' in side
    x, y, w = data.T
    assert x[1] > x[0] and y[0] == y[100]
    h = x[1] - x[0]
    assert abs(np.trapezoid(np.trapezoid(w.reshape(101, 101), dx=h, axis=1), dx=h) - 1) < 1e-3


def test_cli_steady_state_with_optics(tmp_path):
    conf = write(tmp_path, """\
[model]
variant = four_photon
units = si
gamma1 = 2.4e8
gamma2 = 3.6e8
chi = 3.4e4
k = 3.4e4
epsilon = 2.0
[hilbert]
n_max = 5
[optics]
omega = 1.77e15
L = 0.05
""")
    assert run("steady-state", "--config", conf, "--out", tmp_path) == 0
    rows = (tmp_path / "powers.csv").read_text().splitlines()
    assert rows[0] == "branch_id,P_th,P1_out,P2_out"
    assert len(rows) == 6
