import math

import numpy as np
import pytest

from tresca_inverse import cli, experiments
from tresca_inverse.config import from_dict, load_config
from tresca_inverse.geometry import generate_mesh, measure_h
from tresca_inverse.inverse import FrictionCoefficient

FORWARD = """
seed = 0
[domain]
kind = "annulus"
r_in = 0.5
r_out = 1.0
[beta]
epsilon = 0.1
[data]
a = "exp_sine_friction"
mms = "{mms}"
[mesh]
ladder = [0.1, 0.05]
"""

FLOWER = """
seed = 0
[domain]
kind = "flower"
k = 6
[domain.omega]
center_radius = 0.8
axis_radius = 0.25
other_radius = 0.2
[beta]
epsilon = 1.0
[data]
f = "oscillating_source"
g = "zero"
[basis]
J1 = 6
J2 = 6
[truth]
cos = [2.0, 0.3, -0.2, 0.1, 0.05, -0.05]
sin = [0.25, -0.15, 0.1, -0.05, 0.05, 0.02]
[initial]
{initial}
[mesh]
ladder = [0.1, 0.08]
[reference]
target_h = 0.05
seed = 99
cache_dir = "cache"
[noise]
sigma = {sigmas}
"""

TRUTH = "cos = [2.0, 0.3, -0.2, 0.1, 0.05, -0.05]\nsin = [0.25, -0.15, 0.1, -0.05, 0.05, 0.02]"


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def body(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# generated ")
    return lines[1:]


@pytest.fixture(scope="module")
def forward_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("fwd")
    cfg = write(tmp, "fwd.toml", FORWARD.format(mms="radial_wave"))
    codes = [cli.main(["forward-rates", "--config", str(cfg), "--out", str(tmp / f"run{i}")])
             for i in range(2)]
    return tmp, cfg, codes


def test_forward_rates_csv_and_rerun(forward_run):
    tmp, cfg, codes = forward_run
    assert codes == [0, 0]
    first = body(tmp / "run0" / "forward_rates.csv")
    assert first[0] == "h,err_l2,err_h1"
    assert body(tmp / "run1" / "forward_rates.csv") == first
    columns, rows = experiments.read_csv(tmp / "run0" / "forward_rates.csv")
    assert len(rows) == 2
    for row in rows:
        for field in row:
            mantissa = field.lower().split("e")[0].replace("-", "").replace(".", "").lstrip("0")
            assert len(mantissa) <= 17
            float(field)


def test_forward_rows_use_measured_h(forward_run):
    tmp, cfg, _ = forward_run
    conf = load_config(cfg)
    _, rows = experiments.read_csv(tmp / "run0" / "forward_rates.csv")
    for level, (target, row) in enumerate(zip(conf.ladder, rows)):
        assert float(row[0]) == measure_h(generate_mesh(conf.domain, target, seed=conf.seed + level))


def test_halving_h_quarters_l2_error(forward_run):
    tmp, _, _ = forward_run
    _, rows = experiments.read_csv(tmp / "run0" / "forward_rates.csv")
    (h0, e0, _), (h1, e1, _) = [[float(v) for v in r] for r in rows]
    expected = (h0 / h1) ** 2
    assert 0.6 * expected <= e0 / e1 <= 1.6 * expected


def test_zero_manufactured_solution_gives_zero_errors(tmp_path):
    cfg = from_dict({"domain": {"kind": "annulus"}, "beta": {"epsilon": 0.1},
                     "data": {"a": "exp_sine_friction", "mms": "zero"}, "mesh": {"ladder": [0.1]}})
    report = experiments.forward_rates(cfg)
    assert report.rows[0][1] <= 1e-12 and report.rows[0][2] <= 1e-12


def test_inverse_crime_recovery_from_truth_has_no_iterations(tmp_path, capsys):
    cfg = write(tmp_path, "rec.toml", FLOWER.format(initial=TRUTH, sigmas="[0.0]"))
    code = cli.main(["recover", "--config", str(cfg), "--out", str(tmp_path / "out"),
                     "--inverse-crime"])
    assert code == 0
    columns, rows = experiments.read_csv(tmp_path / "out" / "recover_trace.csv")
    assert columns == ["k", "F_norm", "step", "e_rel"]
    assert len(rows) == 1 and float(rows[0][3]) == 0.0
    _, coefs = experiments.read_csv(tmp_path / "out" / "recover_coefficients.csv")
    assert [c[0] for c in coefs][:2] == ["alpha_1", "alpha_2"] and len(coefs) == 12
    assert float(coefs[0][1]) == 2.0
    assert "inverse-crime" in capsys.readouterr().out


def test_coarse_reference_recovery_stalls_at_positivity_boundary(tmp_path, capsys):
    # at h ~ 0.1 the discrete root lies outside the positive cone, so backtracking
    # pins the iterate to min a ~ 0 and the line search gives up
    cfg = write(tmp_path, "rec.toml", FLOWER.format(initial="constant = 2.0", sigmas="[1e-6]"))
    code = cli.main(["recover", "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert code == cli.EXIT_SOLVER
    assert "no acceptable step" in capsys.readouterr().err
    columns, rows = experiments.read_csv(tmp_path / "out" / "recover_trace.csv")
    norms = np.array([float(r[1]) for r in rows])
    assert len(rows) > 5 and np.all(np.diff(norms) <= 0)
    comment = (tmp_path / "out" / "recover_trace.csv").read_text().splitlines()[0]
    assert "fine-reference+noise" in comment
    _, coefs = experiments.read_csv(tmp_path / "out" / "recover_coefficients.csv")
    last = FrictionCoefficient.from_vector([float(c[1]) for c in coefs], 6)
    assert 0.0 < last.min_value() < 1e-6


def test_noise_rates_keeps_going_past_failed_cells(tmp_path, capsys):
    cfg = write(tmp_path, "noise.toml",
                FLOWER.format(initial="constant = 2.0", sigmas="[0.0, 1e-6]"))
    code = cli.main(["noise-rates", "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert code == 0
    assert "4 (sigma, h) cells failed" in capsys.readouterr().err
    columns, rows = experiments.read_csv(tmp_path / "out" / "noise_rates.csv")
    assert columns == ["sigma", "h", "e_rel"] and rows == []
    assert len(list((tmp_path / "cache").glob("reference_*.npz"))) == 1


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "bad.toml", FORWARD.format(mms="not_registered"))
    assert cli.main(["forward-rates", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert cli.main(["recover", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 2


def test_forward_rates_needs_manufactured_solution(tmp_path):
    cfg = write(tmp_path, "nomms.toml", FORWARD.replace('mms = "{mms}"\n', ""))
    assert cli.main(["forward-rates", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_solver_failure_exit_code(tmp_path, monkeypatch, capsys):
    def fail(cfg):
        raise experiments.ExperimentError("level 0 (target h=0.1): nonlinear solve diverged")

    monkeypatch.setattr(experiments, "forward_rates", fail)
    cfg = write(tmp_path, "fwd.toml", FORWARD.format(mms="radial_wave"))
    assert cli.main(["forward-rates", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_SOLVER
    assert "level 0" in capsys.readouterr().err


def test_seed_override(tmp_path):
    cfg = write(tmp_path, "fwd.toml", FORWARD.format(mms="radial_wave").replace("[0.1, 0.05]", "[0.1]"))
    assert cli.main(["--seed", "7", "forward-rates", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    _, rows = experiments.read_csv(tmp_path / "a" / "forward_rates.csv")
    conf = load_config(cfg)
    assert float(rows[0][0]) == measure_h(generate_mesh(conf.domain, 0.1, seed=7))


def test_fit_slope_exact_power_law():
    h = np.array([0.1, 0.05, 0.025])
    assert experiments.fit_slope(h, 3 * h**2) == pytest.approx(2.0, abs=1e-12)
    assert math.isnan(experiments.fit_slope([0.1], [1.0]))



def test_recover_continues_over_ladder(tmp_path):
    near = "cos = [2.1, 0.25, -0.15, 0.1, 0.05, -0.05]\nsin = [0.2, -0.1, 0.1, -0.05, 0.05, 0.0]"
    cfg = load_config(write(tmp_path, "rec.toml", FLOWER.format(initial=near, sigmas="[0.0]")))
    seen = []
    result = experiments.recover(cfg, inverse_crime=True, callback=seen.append)
    assert result.error is None and result.trace.converged
    assert result.h == measure_h(generate_mesh(cfg.domain, cfg.ladder[-1], seed=cfg.seed + 1))
    # the returned trace is the last level only, started from the coarse result
    assert len(seen) > len(result.trace.rows)
    assert result.trace.rows[0].F_norm < seen[0].F_norm
    assert result.trace.rows[-1].e_rel < 1e-6
