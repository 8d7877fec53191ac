import numpy as np
import pytest

from hessmfg.config import ConfigError, load_config, parse_boundary, parse_config
from hessmfg.grid import Grid

SOLVE = """
# minimal solve run
operator = power_1d
operator.p = 3
p = 3
grid.n = 41
boundary = affine(0, 1)   # g = x
"""


def test_parse_solve_config():
    cfg = parse_config(SOLVE, "solve")
    assert cfg.get("grid.n") == 41 and cfg.get("p") == 3
    assert cfg.operator_args() == {"p": 3}
    assert cfg.operator().name.startswith("power")
    assert cfg.grid().shape == (41,)
    assert cfg.energy_spec().p == 3
    assert cfg.to_dict()["command"] == "solve"


def test_seed_and_command_keys():
    cfg = parse_config(SOLVE + "seed = 17\ncommand = solve\n", "solve")
    assert cfg.seed == 17 and "command" not in cfg.values
    with pytest.raises(ConfigError, match="not 'verify'"):
        parse_config("command = solve\n", "verify")


@pytest.mark.parametrize("text,match", [
    (SOLVE + "colour = red\n", "unknown key"),
    ("operator = power_1d\ngrid.n = 41\n", "missing required"),
    (SOLVE + "grid.n = 51\n", "syntax"),  # duplicate key
    ("[section]\n" + SOLVE, "sections"),
    (SOLVE.replace("grid.n = 41", "grid.n = many"), "grid.n"),
    (SOLVE + "kind = cubic\n", "kind"),
    (SOLVE + "solver.measure = l2\n", "measure"),
    (SOLVE + "solver.shrink = 2\n", "solver"),
    (SOLVE.replace("power_1d", "nope_1d"), "operator"),
    (SOLVE.replace("affine(0, 1)", "affine(0, 1, 2)"), "affine"),
    (SOLVE + "tol_hj = nan\n", "nan"),
])
def test_rejected_configs(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text, "solve")


def test_unknown_command():
    with pytest.raises(ConfigError):
        parse_config("", "plot")


def test_probe_needs_three_levels():
    base = "operator = coercive_trace_2d\np = 3\nboundary = quadratic(1)\n"
    assert parse_config(base + "levels = 9, 17, 33\n", "probe").get("levels") == [9, 17, 33]
    with pytest.raises(ConfigError, match="3 grid levels"):
        parse_config(base + "levels = 17\n", "probe")


def test_envelope_range_required_and_ordered():
    with pytest.raises(ConfigError, match="z_min"):
        parse_config("operator = osc_1d\n", "envelope")
    with pytest.raises(ConfigError, match="z_min < z_max"):
        parse_config("operator = osc_1d\nz_min = 1\nz_max = -1\n", "envelope")
    with pytest.raises(ConfigError, match="one-dimensional"):
        parse_config("operator = trace_d\noperator.d = 2\nz_min = -1\nz_max = 1\n", "envelope")
    cfg = parse_config("operator = osc_1d\nz_min = -3\nz_max = 3\nlaminate_n = 4 8 16\n", "envelope")
    assert cfg.get("laminate_n") == [4, 8, 16]


def test_grid_box_and_explicit_convention():
    cfg = parse_config("operator = trace_d\noperator.d = 2\ngrid.n = 9\ngrid.box = -1, 1; 0, 2\n"
                       "boundary = zero()\n", "solve")
    assert cfg.get("grid.box") == ((-1.0, 1.0), (0.0, 2.0))
    assert cfg.grid().d == 2
    with pytest.raises(ConfigError, match="convention"):
        parse_config("A = 1\nB = 0.5\np = 2\nconvention = other\n", "explicit")


def test_load_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SOLVE)
    cfg = load_config(path, "solve", seed=5)
    assert cfg.seed == 5 and cfg.source == str(path)
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.cfg", "solve")


# --- boundary catalog -------------------------------------------------------------

def test_boundary_terms_1d():
    x = np.linspace(-1, 1, 7)
    assert np.all(parse_boundary("zero()", 1)(x) == 0)
    g = parse_boundary("affine(1, -2)", 1)
    assert g.affine == (1.0, -2.0) and g.deviation is None
    assert np.allclose(parse_boundary("quadratic(3)", 1)(x), 1.5 * x ** 2)
    assert np.allclose(parse_boundary("quartic(2)", 1)(x), 0.5 * x ** 4)
    assert np.allclose(parse_boundary("sine(0.5, 3)", 1)(x), 0.5 * np.sin(3 * x))


def test_boundary_sum_2d():
    g = parse_boundary("quartic(1) + quadratic(1) + mixed(0.5) + affine(1, 0, 2)", 2)
    assert g.affine == (1.0, 0.0, 2.0)
    x, y = 0.3, -0.7
    r2 = x * x + y * y
    assert float(g(np.array(x), np.array(y))) == pytest.approx(1 + 2 * y + r2 ** 2 / 4 + r2 / 2 + 0.5 * x * y)
    # two affine terms add
    assert parse_boundary("affine(1, 2, 3) + affine(1, 1, 1)", 2).affine == (2.0, 3.0, 4.0)


@pytest.mark.parametrize("expr", ["mixed(1)", "cubic(1)", "quadratic(a)", "quadratic(1, 2)", "x**2", ""])
def test_boundary_errors(expr):
    with pytest.raises(ConfigError):
        parse_boundary(expr, 1)


def test_boundary_table(tmp_path):
    grid = Grid(1, 11)
    x = grid.axis(0)
    path = tmp_path / "g.csv"
    np.savetxt(path, np.column_stack([x, np.cos(x)]), delimiter=",", header="x,g", comments="")
    g = parse_boundary(f"table({path})", 1)
    assert np.allclose(g(x), np.cos(x), rtol=0, atol=1e-15)
    with pytest.raises(ConfigError, match="no entry"):
        g(np.array([0.123]))
    with pytest.raises(ConfigError, match="3 columns"):
        parse_boundary(f"table({path})", 2)
    with pytest.raises(ConfigError):
        parse_boundary(f"table({tmp_path / 'none.csv'})", 1)
