import pytest

from stochnum import config as cf
from stochnum import channel_sde as ch


def test_defaults():
    c = cf.RunConfig()
    assert (c.topology.rows, c.topology.cols, c.time.n, c.mc.M) == (4, 4, 500, 200)
    assert (c.problem.N0, c.problem.B, c.problem.P_fixed) == (0.1, 1e6, 2.0)
    assert (c.problem.P_min, c.problem.P_max, c.problem.P_i_max) == (1.0, 3.0, 3.0)
    assert (c.solver.A_prime, c.solver.tol, c.solver.window) == (0.1, 1e-3, 8)
    m = c.channel_model()
    assert m.x0 == pytest.approx(float(m.gamma(0.0)))
    assert m.beta.value == 100.0


def test_round_trip():
    c = cf.loads("[time]\nT = 2\nn = 40\n[channel]\ndelta = sinusoid offset=35 amplitude=15 "
                 "omega=31.4\n", name="x")
    again = cf.loads(cf.dumps(c), name="x")
    assert again == c


@pytest.mark.parametrize("text,needle", [
    ("[time]\ns = 1\nT = 1\n", "T > s"),
    ("[time]\nT = 0.5\ns = 2\n", "T > s"),
    ("[bogus]\nx = 1\n", "bogus"),
    ("[time]\nspeed = 3\n", "speed"),
    ("[time]\nn = 2.5\n", "n"),
    ("[problem]\nmode = P1\nscheduling = yes\n", "scheduling"),
    ("[problem]\npower_control = maybe\n", "power_control"),
    ("[problem]\nutility = scaled-log-over-time\n", "s > 0"),
    ("[problem]\nutility = cubic\n", "cubic"),
    ("[channel]\nbeta = wobble 3\n", "wobble"),
    ("[channel]\nbeta = -5\n", "beta"),
    ("[topology]\nflows = 0-1\n", "flows"),
    ("[topology]\nlinks = 0>1\n", "flows"),
    ("[problem]\nP_min = 4\n", "P_min"),
])
def test_rejections(text, needle):
    with pytest.raises(cf.ConfigError, match=needle):
        cf.loads(text)


def test_coefficient_parsing():
    f = cf.parse_coefficient("piecewise values=10,100,500 breaks=0.25,0.5", 0.0, 4.0)
    assert [float(f(t)) for t in (0.5, 1.5, 3.0)] == [10.0, 100.0, 500.0]
    s = cf.parse_coefficient("sinusoid offset=35 amplitude=15 omega=31.4159265", 0.0, 1.0)
    assert float(s(0.05)) == pytest.approx(35 + 15 * __import__("math").sin(31.4159265 * 0.05))
    assert cf.parse_coefficient("constant 7", 0, 1).value == 7.0
    g = cf.parse_coefficient("paper-gamma 70", 0.0, 1.0)
    assert g.kind == ch.PAPER_GAMMA


def test_explicit_links_and_flows():
    c = cf.loads("[topology]\nlinks = 0>1, 1>2\nflows = 0>2\n")
    assert cf.parse_pairs(c.topology.links) == [(0, 1), (1, 2)]


def test_load_uses_file_stem(tmp_path):
    p = tmp_path / "mine.cfg"
    p.write_text("[mc]\nM = 3\n")
    c = cf.load(p)
    assert c.name == "mine" and c.mc.M == 3


def test_output_env_override(monkeypatch):
    monkeypatch.setenv(cf.OUTPUT_ENV, "/tmp/elsewhere")
    assert str(cf.RunConfig().output_dir()) == "/tmp/elsewhere"
