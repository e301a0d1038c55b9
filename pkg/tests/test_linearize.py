import threading
from math import factorial

import numpy as np
import pytest

from wavegauge import forward as fw
from wavegauge import gauge as gg
from wavegauge import linearize as lz
from wavegauge import scenarios as sc
from wavegauge.errors import ConfigurationError, ContractError
from wavegauge.mesh import build_grid, l2_q, l2_sigma
from wavegauge.suites import manufactured_spec

BELL = [1, 1, 2, 5, 15, 52, 203]


@pytest.mark.parametrize("n", range(7))
def test_set_partitions_counts(n):
    parts = list(lz.set_partitions(range(n)))
    assert len(parts) == BELL[n]
    for p in parts:
        assert sorted(i for b in p for i in b) == list(range(n))


def test_request_validation(grid):
    spec = sc.polynomial_spec(grid)
    dirs = sc.direction_battery(grid, 2)
    assert lz.LinearizationRequest(spec, None, dirs).order == 2
    assert lz.LinearizationRequest(spec, None, dirs, (0, 1)).subset == frozenset({1})
    with pytest.raises(ConfigurationError):
        lz.LinearizationRequest(spec, None, dirs, (1,))
    with pytest.raises(ConfigurationError):
        lz.LinearizationRequest(spec, None, dirs, (1, 2))


def test_base_solution_examples(grid):
    spec = sc.polynomial_spec(grid, n=2)
    assert np.all(lz.base_solution(spec, None) == 0)
    g = build_grid(1, 101, 0.9, 1.0)
    mspec, exact = manufactured_spec(g)
    assert np.abs(lz.base_solution(mspec) - exact).max() < 1e-4


def test_base_solution_stability_constant(grid):
    spec = sc.polynomial_spec(grid, n=3)
    f = sc.input_battery(grid, 1)[0]
    consts = [l2_q(grid, lz.base_solution(spec, e * f)) / (e * l2_sigma(grid, f)) for e in (1e-2, 5e-3)]
    assert consts[0] == pytest.approx(consts[1], rel=0.05)


def test_first_variation_examples(grid):
    spec = sc.polynomial_spec(grid, n=2)
    f0 = sc.boundary_bump(grid, 1, 2.3, 0.6, 0.3)
    u0 = lz.base_solution(spec, f0)
    assert np.all(lz.first_variation(spec, u0, fw.zero_boundary(grid)) == 0)
    zero = fw.ProblemSpec(grid, sc.DEFAULT_WINDOW, fw.Nonlinearity.zero())
    f1 = sc.direction_battery(grid, 1)[0]
    v = lz.first_variation(zero, np.zeros(grid.shape), f1)
    assert np.array_equal(v, fw.solve_linear(grid, None, None, None, None, f1))


def test_order_one_oracle_exact_on_linear_map(grid):
    spec = sc.polynomial_spec(grid, n=1)
    f1 = sc.direction_battery(grid, 1)[0]
    direct = fw.neumann_trace(grid, lz.first_variation(spec, np.zeros(grid.shape), f1)).neumann
    fd = lz.dtn_derivative_fd(spec, None, [f1])
    assert np.abs(fd.neumann - direct).max() <= 1e-8 * np.abs(direct).max()


@pytest.mark.parametrize("k", [1, 2, 3])
def test_oracle_agreement_cubic(grid, k):
    spec = sc.polynomial_spec(grid, n=3)
    dirs = sc.direction_battery(grid, 3)
    f0 = sc.boundary_bump(grid, 1, 2.3, 0.6, 0.3)
    lin = lz.Linearizer(spec, f0, dirs)
    direct = lin.trace(range(k))
    fd = lz.dtn_derivative_fd(spec, f0, dirs[:k])
    assert not fd.flagged
    assert l2_sigma(grid, direct - fd.neumann) <= 1e-3 * l2_sigma(grid, direct)


def test_quadratic_third_order_source(grid):
    q2 = sc.window_field(grid, sc.DEFAULT_WINDOW, 1.0)
    spec = fw.ProblemSpec(grid, sc.DEFAULT_WINDOW, fw.Nonlinearity("polynomial", (0.0, q2)))
    dirs = sc.direction_battery(grid, 3)
    lin = lz.Linearizer(spec, None, dirs)
    v = {i: lin.variation({i}) for i in range(3)}
    w = {frozenset(s): lin.variation(s) for s in ({0, 1}, {0, 2}, {1, 2})}
    src = -2 * q2 * (v[0] * w[frozenset({1, 2})] + v[1] * w[frozenset({0, 2})] + v[2] * w[frozenset({0, 1})])
    assert np.abs(lin.source(frozenset({0, 1, 2})) - src).max() <= 1e-12 * np.abs(src).max()
    fd = lz.dtn_derivative_fd(spec, None, dirs)
    direct = lin.trace({0, 1, 2})
    assert l2_sigma(grid, direct - fd.neumann) <= 1e-3 * l2_sigma(grid, direct)


def test_second_variation_of_linear_equation_vanishes(grid):
    spec = sc.polynomial_spec(grid, n=1)
    lin = lz.Linearizer(spec, None, sc.direction_battery(grid, 2))
    assert np.all(lin.variation({0, 1}) == 0)


def test_second_order_oracle_quadratic(grid):
    spec = sc.polynomial_spec(grid, n=2)
    dirs = sc.direction_battery(grid, 2)
    req = lz.LinearizationRequest(spec, None, dirs)
    w = lz.kth_variation(req)
    direct = fw.neumann_trace(grid, w).neumann
    fd = lz.dtn_derivative_fd(spec, None, dirs)
    assert l2_sigma(grid, direct - fd.neumann) <= 1e-3 * l2_sigma(grid, direct)


def test_order_guard(grid):
    spec = sc.polynomial_spec(grid, n=2)
    dirs = sc.direction_battery(grid, 6) + sc.direction_battery(grid, 1)
    with pytest.raises(ContractError):
        lz.kth_variation(lz.LinearizationRequest(spec, None, dirs))
    with pytest.raises(ContractError):
        lz.dtn_derivative_fd(spec, None, dirs)
    with pytest.raises(ContractError):
        lz.kth_variation(lz.LinearizationRequest(spec, None, dirs[:2], (0, 0)))


def test_effective_potentials(grid, rng):
    spec = sc.polynomial_spec(grid, n=3)
    pots = lz.effective_potentials(spec, np.zeros(grid.shape), 4)
    for k in (1, 2, 3):
        assert np.array_equal(pots[k], factorial(k) * spec.nonlinearity.q[k - 1])
    assert np.all(pots[4] == 0)
    quad = sc.polynomial_spec(grid, n=2)
    u0 = lz.base_solution(quad, sc.input_battery(grid, 1)[0])
    q1, q2 = quad.nonlinearity.q
    assert np.allclose(lz.effective_potentials(quad, u0, 1)[1], q1 + 2 * q2 * u0, rtol=0, atol=1e-14)
    ex = sc.catalogue_spec(1, grid)
    for k in (1, 2, 3):
        assert np.allclose(lz.effective_potentials(ex, u0, 3)[k], ex.nonlinearity.q[0] * np.exp(u0))


def test_symmetry_and_multilinearity(grid):
    spec = sc.polynomial_spec(grid, n=3)
    dirs = sc.direction_battery(grid, 3)
    f0 = sc.boundary_bump(grid, 1, 2.3, 0.6, 0.3)
    u0 = lz.base_solution(spec, f0)
    base = lz.Linearizer(spec, f0, dirs, u0).variation({0, 1, 2})
    perm = lz.Linearizer(spec, f0, [dirs[2], dirs[0], dirs[1]], u0).variation({0, 1, 2})
    scale = np.abs(base).max()
    assert np.abs(perm - base).max() <= 1e-10 * scale
    scaled = lz.Linearizer(spec, f0, [dirs[0], -2.5 * dirs[1], dirs[2]], u0).variation({0, 1, 2})
    assert np.abs(scaled + 2.5 * base).max() <= 1e-10 * 2.5 * scale


def test_cache_is_thread_safe(grid):
    spec = sc.polynomial_spec(grid, n=3)
    lin = lz.Linearizer(spec, None, sc.direction_battery(grid, 3))
    results = []

    def work():
        results.append(lin.variation({0, 1, 2}))

    threads = [threading.Thread(target=work) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(r is results[0] for r in results)
    assert len(lin._cache) == 7


def test_gauge_pair_has_equal_second_derivative(grid, window):
    spec2 = sc.polynomial_spec(grid, window, n=2)
    spec1 = gg.transform_spec(spec2, gg.make_gauge(grid, window, 0.2))
    dirs = sc.direction_battery(grid, 2)
    a = lz.dtn_derivative_fd(spec1, None, dirs)
    b = lz.dtn_derivative_fd(spec2, None, dirs)
    ref = l2_sigma(grid, b.neumann)
    assert l2_sigma(grid, a.neumann - b.neumann) <= 1e-3 * ref


def test_first_variations_agree_across_gauge_pair(window):
    rel = []
    for nx in (51, 101):
        grid = sc.default_grid(nx)
        spec2 = sc.polynomial_spec(grid, window, n=2)
        spec1 = gg.transform_spec(spec2, gg.make_gauge(grid, window, 0.2))
        f0 = sc.input_battery(grid, 1)[0]
        f1 = sc.direction_battery(grid, 1)[0]
        v = [lz.first_variation(s, lz.base_solution(s, f0), f1) for s in (spec1, spec2)]
        rel.append(l2_q(grid, v[0] - v[1]) / l2_q(grid, v[1]))
    assert rel[1] < 1e-3
    assert rel[0] / rel[1] >= 1.7


def test_richardson_flag_for_strong_nonlinearity(grid):
    spec = sc.polynomial_spec(grid, n=3, scale=3.0)
    dirs = sc.direction_battery(grid, 2)
    fd = lz.dtn_derivative_fd(spec, None, dirs, ladder=(2.0, 1.0, 0.5))
    assert fd.flagged
    assert "too strong" in fd.message
    with pytest.raises(ConfigurationError):
        lz.dtn_derivative_fd(spec, None, dirs, ladder=(1e-2, 5e-3))
