import numpy as np
import pytest

from wavegauge import forward as fw
from wavegauge import scenarios as sc
from wavegauge.errors import ConfigurationError, ContractError, SolverError
from wavegauge.mesh import Profile, build_grid, energy, l2_q, l2_sigma, sample
from wavegauge.suites import convergence_table, manufactured_spec


# -- nonlinearities -----------------------------------------------------------


def test_eval_polynomial_first_derivative(rng):
    u = rng.normal(size=(4, 5))
    nl = fw.Nonlinearity("polynomial", (0.0, 1.0))
    assert fw.eval_nonlinearity(nl, u, 1) == pytest.approx(2 * u)
    assert fw.eval_nonlinearity(nl, u, 2) == pytest.approx(2 + 0 * u)
    with pytest.raises(ContractError):
        fw.eval_nonlinearity(nl, u, 3)


def test_eval_exp_all_derivatives(rng):
    u = rng.normal(size=7)
    q = rng.uniform(0.5, 1.5, size=7)
    nl = fw.Nonlinearity("exp_potential", (q,))
    for k in range(0, 9):
        assert fw.eval_nonlinearity(nl, u, k) == pytest.approx(q * np.exp(u))
    with pytest.raises(ContractError):
        fw.eval_nonlinearity(nl, u, 9)


def test_eval_sin_plus_cos_first_derivative(rng):
    u, p, q = rng.normal(size=(3, 9))
    nl = fw.Nonlinearity("sin_plus_cos", (q,), p)
    assert fw.eval_nonlinearity(nl, u, 1) == pytest.approx(p * np.cos(u) - q * np.sin(u))


@pytest.mark.parametrize("kind", fw.KINDS)
def test_eval_derivatives_match_differences(kind, rng):
    z = rng.uniform(-1, 1, size=11)
    q = rng.uniform(0.5, 1.5, size=11)
    p = rng.uniform(0.5, 1.5, size=11)
    qs = (q, 0.5 * q, 0.2 * q) if kind in ("polynomial", "zexp_plus_poly") else (q,)
    nl = fw.Nonlinearity(kind, qs, p if kind in ("sin_plus_exp", "sin_plus_cos", "zexp_plus_poly") else None)
    h = 1e-5
    for k in range(0, 3):
        num = (fw.eval_nonlinearity(nl, z + h, k) - fw.eval_nonlinearity(nl, z - h, k)) / (2 * h)
        assert fw.eval_nonlinearity(nl, z, k + 1) == pytest.approx(num, rel=1e-6, abs=1e-8)


@pytest.mark.parametrize("kind,value", [
    ("polynomial", 0.0), ("sin_potential", 0.0), ("z_sin", 0.0),
    ("exp_potential", 1.3), ("sin_plus_exp", 1.3), ("sin_plus_cos", 1.3), ("zexp_plus_poly", 0.0),
])
def test_eval_at_zero_matches_closed_form(kind, value):
    q = 1.3
    p = 0.7
    qs = (q, q) if kind in ("polynomial", "zexp_plus_poly") else (q,)
    nl = fw.Nonlinearity(kind, qs, p if kind in ("sin_plus_exp", "sin_plus_cos", "zexp_plus_poly") else None)
    assert float(fw.eval_nonlinearity(nl, np.zeros(1), 0)[0]) == pytest.approx(value)


def test_nonlinearity_validation():
    with pytest.raises(ConfigurationError):
        fw.Nonlinearity("cubic_root", (1.0,))
    with pytest.raises(ConfigurationError):
        fw.Nonlinearity("sin_plus_cos", (1.0,))
    with pytest.raises(ConfigurationError):
        fw.Nonlinearity("exp_potential", (1.0, 2.0))


# -- linear solver ------------------------------------------------------------


def test_zero_data_gives_zero(grid):
    assert np.all(fw.solve_linear(grid) == 0)
    spec = fw.ProblemSpec(grid, sc.DEFAULT_WINDOW, fw.Nonlinearity.zero())
    res = fw.picard(spec)
    assert res.iterations == 1
    assert np.all(res.u == 0)
    assert fw.residual(spec, res.u) == 0.0
    assert np.all(fw.dtn(spec, fw.zero_boundary(grid)).neumann == 0)


def _standing(nx):
    g = build_grid(1, nx, 0.9, 1.0)
    u = fw.solve_linear(g, g=np.sin(np.pi * g.x))
    exact = sample(g, lambda t, x: np.sin(np.pi * x) * np.cos(np.pi * t))
    return g, u, exact


def test_standing_wave_second_order():
    errs = [np.abs(u - ex).max() for _, u, ex in map(_standing, (51, 101, 201))]
    assert errs[1] < 1e-3
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.15)


def test_manufactured_linear_second_order():
    def run(nx):
        g = build_grid(1, nx, 0.9, 1.0)

        def ustar(t, x):
            return t**3 * x**2 * (1 - x) ** 2

        def F(t, x):
            return 6 * t * x**2 * (1 - x) ** 2 - t**3 * (2 - 12 * x + 12 * x**2) + ustar(t, x)

        u = fw.solve_linear(g, 1.0, sample(g, F))
        return np.abs(u - sample(g, ustar)).max()

    e = [run(nx) for nx in (51, 101, 201)]
    assert e[0] / e[1] == pytest.approx(4.0, rel=0.15)
    assert e[1] / e[2] == pytest.approx(4.0, rel=0.15)


def test_manufactured_semilinear_matches_table():
    rows = convergence_table((51, 101, 201))
    assert rows[-1]["max_error"] < 1e-4
    for r in rows[1:]:
        assert 3.4 <= r["ratio"] <= 4.6


def test_residual_of_manufactured_field():
    res = []
    for nx in (51, 101, 201):
        g = build_grid(1, nx, 0.9, 1.0)
        spec, exact = manufactured_spec(g)
        res.append(fw.residual(spec, exact))
    assert res[0] / res[1] == pytest.approx(4.0, rel=0.2)
    assert res[1] / res[2] == pytest.approx(4.0, rel=0.2)


def test_linearity(grid, rng):
    def data(seed):
        r = np.random.default_rng(seed)
        F = sc.bump_field(grid, sc.DEFAULT_WINDOW, r.uniform(0.5, 1.5), r.uniform(0.3, 0.7), 0.2)
        g = r.uniform(0.5, 1) * Profile(r.uniform(0.3, 0.7), 0.25)(grid.x)
        h = r.uniform(0.5, 1) * Profile(r.uniform(0.3, 0.7), 0.25)(grid.x)
        f = sc.boundary_bump(grid, int(r.integers(2)), r.uniform(1, 4), 0.5, r.uniform(0.5, 1))
        return F, g, h, f

    pot = 0.5 + sc.window_field(grid, sc.DEFAULT_WINDOW)
    a, b = data(1), data(2)
    ua = fw.solve_linear(grid, pot, *a)
    ub = fw.solve_linear(grid, pot, *b)
    uab = fw.solve_linear(grid, pot, *[x + 2 * y for x, y in zip(a, b)])
    scale = np.abs(uab).max()
    assert np.abs(uab - ua - 2 * ub).max() <= 1e-12 * scale


def test_finite_speed_of_propagation():
    g = build_grid(1, 201, 0.9, 0.6)
    init = Profile(0.12, 0.1)(g.x)
    u = fw.solve_linear(g, g=init, h=0.5 * init)
    t = g.t[:, None]
    x = g.x[None, :]
    outside = (x - 0.25) > t + 2 * g.hx
    assert np.abs(u[outside]).max() <= 1e-8 * np.abs(u).max()


def test_incompatible_boundary_data_rejected(grid):
    f = np.ones(grid.boundary_shape)
    with pytest.raises(ConfigurationError, match="compatible"):
        fw.solve_linear(grid, f=f)
    fw.check_compatible(grid, fw.compatible(grid, f))


def test_instability_is_detected(grid):
    with pytest.raises(SolverError, match="unstable"):
        fw.solve_linear(grid, -1e4, g=np.sin(np.pi * grid.x))


def test_complex_data_solved_componentwise(grid):
    f = sc.boundary_bump(grid, 0, 2.0, 0.5)
    u = fw.solve_linear(grid, 0.3, f=(1 + 2j) * f)
    ur = fw.solve_linear(grid, 0.3, f=f)
    assert np.abs(u - (1 + 2j) * ur).max() < 1e-13
    with pytest.raises(ContractError):
        fw.solve_linear(grid, 1j * np.ones(grid.shape))


# -- semilinear solver --------------------------------------------------------


def test_small_data_needs_few_iterations(grid):
    spec = sc.polynomial_spec(grid, n=2)
    f = sc.input_battery(grid, 1)[0]
    assert fw.picard(spec, 1e-3 * f).iterations <= 5


def test_picard_remainder_is_quadratic(grid):
    spec = sc.polynomial_spec(grid, n=2)
    f = sc.input_battery(grid, 1)[0]
    r1, r2 = fw.picard(spec, 2e-3 * f), fw.picard(spec, 1e-3 * f)
    assert r2.iterations <= r1.iterations
    assert r1.first_update / r2.first_update == pytest.approx(4.0, rel=0.5)


def test_semilinear_residual_bounded(grid):
    spec = sc.polynomial_spec(grid, n=3)
    f = sc.input_battery(grid, 1)[0]
    u = fw.solve_semilinear(spec, f)
    lin = fw.solve_linear(grid, None, None, None, None, f)
    floor = fw.residual(np.zeros(grid.shape), lin, grid)
    assert fw.residual(spec, u) <= max(10 * floor, 1e-8 * np.abs(u).max())


def test_base_solution_is_respected(grid):
    spec = sc.polynomial_spec(grid, n=2)
    f = sc.input_battery(grid, 2)
    u_a = fw.solve_semilinear(spec, f[0])
    # neighborhood solve around the solution for f[0]
    u_b = fw.solve_semilinear(spec, f[0] + 0.1 * f[1], base=u_a)
    u_c = fw.solve_semilinear(spec, f[0] + 0.1 * f[1])
    assert np.abs(u_b - u_c).max() <= 1e-9 * np.abs(u_c).max()


def test_large_data_aborts(grid):
    spec = sc.polynomial_spec(grid, n=2, scale=8.0)
    f = 16 * sc.input_battery(grid, 1)[0]
    with pytest.raises(SolverError, match="local well-posedness"):
        fw.solve_semilinear(spec, f)


def test_zero_data_rigidity(grid):
    spec = sc.polynomial_spec(grid, n=3)
    u = fw.solve_semilinear(spec)
    assert max(energy(grid, u, t) for t in grid.t) <= 1e-12


def test_tiny_quadratic_matches_linear(grid):
    q1 = sc.window_field(grid, sc.DEFAULT_WINDOW, 0.4)
    q2 = 1e-6 * sc.window_field(grid, sc.DEFAULT_WINDOW)
    spec = fw.ProblemSpec(grid, sc.DEFAULT_WINDOW, fw.Nonlinearity("polynomial", (q1, q2)))
    f = sc.input_battery(grid, 1)[0]
    u = fw.solve_semilinear(spec, f)
    lin = fw.solve_linear(grid, q1, None, None, None, f)
    assert np.abs(u - lin).max() <= 1e-4 * np.abs(lin).max()


def test_spec_validation(grid):
    window = sc.DEFAULT_WINDOW
    nl = fw.Nonlinearity.zero()
    with pytest.raises(ConfigurationError, match="boundary"):
        fw.ProblemSpec(grid, window, nl, g=np.ones(grid.spatial_shape))
    with pytest.raises(ConfigurationError, match="shape"):
        fw.ProblemSpec(grid, window, nl, F=np.ones((3, 3)))
    with pytest.raises(ConfigurationError, match="after t1"):
        fw.ProblemSpec(grid, window, nl, F=np.ones(grid.shape), F_after_t1=True)


# -- traces -------------------------------------------------------------------


def test_trace_of_constant_and_affine(grid):
    c = np.full(grid.shape, 2.5)
    assert np.abs(fw.neumann_trace(grid, c).neumann).max() < 1e-12
    u = np.broadcast_to(grid.x, grid.shape)
    dn = fw.neumann_trace(grid, u).neumann
    assert dn[:, 0, 0] == pytest.approx(-np.ones(grid.nt + 1), abs=1e-12)
    assert dn[:, 1, 0] == pytest.approx(np.ones(grid.nt + 1), abs=1e-12)


def test_trace_of_standing_wave():
    errs = []
    for nx in (51, 101, 201):
        g = build_grid(1, nx, 0.9, 1.0)
        u = sample(g, lambda t, x: np.sin(np.pi * x) * np.cos(np.pi * t))
        dn = fw.neumann_trace(g, u).neumann
        exact = -np.pi * np.cos(np.pi * g.t)
        errs.append(np.abs(dn[:, 0, 0] - exact).max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.15)


def test_trace_error_estimate_tracks_true_error():
    for nx in (51, 101):
        g, u, _ = _standing(nx)
        exact = -np.pi * np.cos(np.pi * g.t)[:, None, None] * np.ones(g.boundary_shape)
        true = exact - fw.neumann_trace(g, u).neumann
        est = fw.linear_trace_error(g, None, u).correction
        assert l2_sigma(g, true - est) <= 0.1 * l2_sigma(g, true)


def test_dtn_sees_quadratic_coefficient(grid):
    spec = sc.polynomial_spec(grid, n=2)
    other = sc.perturb(spec, "q2", 1e-2)
    from wavegauge.gauge import compare_dtn
    cmp_ = compare_dtn(spec, other, sc.input_battery(grid, 1)[0])
    assert cmp_.ratio > 10


def test_window_field_support(grid, window):
    q = sc.window_field(grid, window)
    outside = (grid.t < window.t1) | (grid.t > window.t2)
    assert np.all(q[outside] == 0)
    assert l2_q(grid, q) > 0
