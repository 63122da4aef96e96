import json

import numpy as np
import pytest

from stochnum import channel_sde as ch
from stochnum import cli
from stochnum import experiments as ex
from stochnum.config import loads

SMALL = """
[topology]
rows = 2
cols = 3
[channel]
delta = 20
[time]
T = 1
n = 20
[mc]
M = 4
[solver]
max_iters = 20000
"""

SINGLE = """
[topology]
links = 0>1
flows = 0>1
interference = node-exclusive
[channel]
gamma = 78
delta = 0
[time]
T = 20
n = 50
[mc]
M = 1
"""


def small(**sections):
    return loads(SMALL, name="small").with_values(**sections) if sections else loads(SMALL, "small")


def csv_bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.glob("*.csv"))}


def test_run_writes_manifest(tmp_path):
    o = ex.run(small(), out_dir=tmp_path)
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["converged"] and report["iterations"] == o.report.iterations
    for name in ("trace.csv", "rates.csv", "links.csv", "flows.csv", "sets.csv", "config.cfg"):
        assert (tmp_path / name).exists()
        assert name in report["files"]
    header = (tmp_path / "trace.csv").read_text().splitlines()[0].split(",")
    assert header[:6] == ["eta", "kappa", "dual_estimate", "dual_se", "subgradient_norm",
                          "multiplier_change"]
    assert len(report["rates"]) == len(o.spec.flows.flows)
    rates = (tmp_path / "rates.csv").read_text().splitlines()
    assert len(rates) == 1 + len(o.spec.flows.flows)


def test_rerun_is_byte_identical(tmp_path):
    ex.run(small(), out_dir=tmp_path / "a")
    ex.run(small(), out_dir=tmp_path / "b")
    assert csv_bytes(tmp_path / "a") == csv_bytes(tmp_path / "b")
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_svg_does_not_change_csv(tmp_path):
    ex.run(small(), out_dir=tmp_path / "a")
    ex.run(small(outputs={"emit_svg": False}), out_dir=tmp_path / "b")
    assert csv_bytes(tmp_path / "a") == csv_bytes(tmp_path / "b")
    assert list((tmp_path / "a").glob("*.svg")) and not list((tmp_path / "b").glob("*.svg"))


def test_paths_csv(tmp_path):
    ex.run(small(outputs={"emit_paths": True}), out_dir=tmp_path)
    lines = (tmp_path / "paths.csv").read_text().splitlines()
    assert lines[0] == "path,b,tau,x_db" and len(lines) == 1 + 4 * 21


def test_cli_exit_codes(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL)
    assert cli.main(["--out", str(tmp_path / "o"), "run", str(cfg)]) == 0
    cfg.write_text(SMALL.replace("max_iters = 20000", "max_iters = 5"))
    assert cli.main(["--out", str(tmp_path / "o"), "run", str(cfg)]) == 2
    cfg.write_text("[time]\ns = 2\nT = 1\n")
    assert cli.main(["run", str(cfg)]) == 1
    blocker = tmp_path / "file"
    blocker.write_text("")
    cfg.write_text(SMALL)
    assert cli.main(["--out", str(blocker), "run", str(cfg)]) == 1


def test_cli_reports_offending_key(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("[time]\nspeed = 1\n")
    assert cli.main(["run", str(cfg)]) == 1
    assert "speed" in capsys.readouterr().err


def test_sweep_delta_repeated_value_identical(tmp_path):
    study = ex.sweep_delta(small(), [0.0, 0.0], out_dir=tmp_path)
    a, b = study.rows
    assert a == b
    ma, mb = (o.result.multipliers.flat() for o in study.outcomes)
    np.testing.assert_array_equal(ma, mb)


def test_sweep_delta_needs_two_values():
    with pytest.raises(ValueError):
        ex.sweep_delta(small(), [5.0])


def test_sweep_delta_tv_label(tmp_path):
    study = ex.sweep_delta(small(), [20.0, "tv", 50.0], out_dir=tmp_path)
    assert [r["delta"] for r in study.rows] == ["20", "tv", "50"]
    names = [v.name for v in study.verdicts]
    assert "time-varying delta between delta=20 and delta=50" in names


def test_delta_verdicts_logic():
    rows = [{"delta": "0", "summed_utility": -2.0, "summed_utility_se": 0.0, "rate_0": 0.1,
             "expected_link_power": 1.5},
            {"delta": "5", "summed_utility": -1.0, "summed_utility_se": 0.1, "rate_0": 0.2,
             "expected_link_power": 1.4}]
    v = ex.delta_verdicts(rows, power_control=True)
    assert all(x.passed for x in v)
    rows[1]["expected_link_power"] = 1.5
    assert not ex.delta_verdicts(rows, power_control=True)[-1].passed


CHANNEL = "[channel]\nbeta = 100\ngamma = 70\ndelta = 25\n[time]\nn = 50\n"


def test_convex_order_constant_coefficients(tmp_path):
    study = ex.verify_convex_order(loads(CHANNEL), [0, 25, 50], M=2000, out_dir=tmp_path)
    assert study.passed, [v.line() for v in study.verdicts]


def test_convex_order_single_delta_repeated():
    study = ex.verify_convex_order(loads(CHANNEL), [25, 25], M=1000, write=False)
    cap = [r for r in study.rows if "mean_int_c" in r]
    assert cap[0]["mean_int_c"] == cap[1]["mean_int_c"]


def test_convex_order_needs_enough_paths():
    with pytest.raises(ValueError):
        ex.verify_convex_order(loads(CHANNEL), [0, 50], M=999)


def test_oracle_single_link(tmp_path):
    study = ex.oracle_small_instance(loads(SINGLE), out_dir=tmp_path)
    assert study.passed
    assert study.rows[0]["relative_gap"] <= 0.02


def test_oracle_lambda_max_binding(tmp_path):
    cfg = loads(SINGLE).with_values(problem={"lambda_max": 0.2})
    study = ex.oracle_small_instance(cfg, out_dir=tmp_path)
    row = study.rows[0]
    assert row["oracle_lambda"] == pytest.approx(0.2)
    assert row["solver_lambda"] == pytest.approx(0.2)


def test_oracle_power_control_single_link():
    cfg = loads(SINGLE).with_values(problem={"power_control": True}, time={"T": 1.0})
    spec = ex.build_spec(cfg)
    res = ex.oracle_primal(spec)
    assert 1.0 <= res["power"] <= 3.0
    assert res["share"] * res["power"] * 1.0 <= spec.net.P_i_max + 1e-9


def test_oracle_refusals():
    with pytest.raises(ex.OracleRefusal, match="links"):
        ex.oracle_small_instance(loads(SINGLE).with_values(
            topology={"links": "0>1, 1>2, 2>3", "flows": "0>3"}))
    with pytest.raises(ex.OracleRefusal, match="delta"):
        ex.oracle_small_instance(loads(SINGLE).with_values(channel={"delta": "5"}))
    with pytest.raises(ex.OracleRefusal, match="constant"):
        ex.oracle_small_instance(loads(SINGLE).with_values(channel={"beta": "sinusoid offset=50 amplitude=5 omega=3"}))


def test_sweep_single_values_trivially_pass(tmp_path):
    assert ex.sweep_T(small(), [1.0], out_dir=tmp_path / "t").passed
    assert ex.sweep_n(small(), [20], out_dir=tmp_path / "n").passed


def test_tv_beta_constant_schedules_equal(tmp_path):
    study = ex.run_time_varying_beta(small(), [(100.0,), (100.0, 100.0, 100.0)], out_dir=tmp_path)
    a, b = study.rows
    assert a["summed_utility"] == b["summed_utility"]
    assert study.passed


def test_beta_schedule_only_moves_mean_path_when_noiseless():
    cfg = small(channel={"delta": "0", "x0": "60", "gamma": "70"})
    grid = cfg.grid()
    for sch in (ex.HIGH_EARLY, ex.LOW_EARLY):
        c = cfg.with_values(channel={"beta": ex._beta_text(sch)})
        model = c.channel_model()
        mean, var = ch.ltf_mean_variance(model, grid)
        path = ch.sample_ltf_path(model, ch.ltf_step_coefficients(model, grid), (0, 3)).values
        np.testing.assert_allclose(path, mean, rtol=1e-12)
        assert np.all(var == 0)


def test_rate_curve_closed_form():
    assert ex.rate_curve(1.0, [1.0, 2.0], 1.0).tolist() == [1.0, 0.5]
    tau = np.linspace(1.0, 3.0, 201)
    curve = ex.rate_curve(1.0, tau, 0.4)
    assert np.all(curve[tau <= 2.5] == 0.4)
    assert np.all(curve[tau > 2.5] < 0.4)


def test_time_invariant_rates_constant_in_t(tmp_path):
    o = ex.run(small(), out_dir=tmp_path)
    lam = o.result.primal.lam
    assert np.all(lam == lam[:, :1])


def test_tv_utilities_requires_time_varying_utility():
    with pytest.raises(ValueError):
        ex.run_time_varying_utilities(small())
