import numpy as np
import pytest

from potlab.kernel import (RadialKernel, convolve_fast, convolve_measure,
                           convolve_naive, dyadic_riesz_bounds,
                           dyadic_riesz_potential, kernel_norm_1,
                           kernel_norm_tail_bound, kernel_value, lp_norm,
                           young_check)
from potlab.space import build_tree, model_space


def constant_kernel(space, value=1.0, p=2.0):
    return RadialKernel("radial", p=p, level_values=(value,) * (space.depth + 1))


def test_kernel_validation():
    with pytest.raises(ValueError):
        RadialKernel("riesz", s=0.3, p=2.0)       # below 1/p'
    with pytest.raises(ValueError):
        RadialKernel("riesz", s=1.0, p=2.0)
    with pytest.raises(ValueError):
        RadialKernel("riesz", s=0.75, p=1.0)
    with pytest.raises(ValueError):
        RadialKernel("radial", level_values=(1.0, -1.0))
    with pytest.raises(ValueError):
        RadialKernel("nosuch")


def test_kernel_value_examples(tree6):
    k = RadialKernel("riesz", s=0.5, p=2.0)
    x, y = 0, 16    # lca level 2 on depth 6: distance 0.25
    assert tree6.tree.lca_level(x, y) == 1
    y = 8           # lca level 2 -> distance 0.25
    assert tree6.tree.lca_level(x, y) == 2
    assert kernel_value(k, tree6, x, y) == pytest.approx(0.25**-0.5)
    const = constant_kernel(tree6.tree)
    assert kernel_value(const, tree6, 3, 3) == 1.0
    assert kernel_value(const, tree6, 3, 60) == 1.0
    with pytest.raises(ValueError):
        kernel_value(k, tree6, 5, 5)


def test_kernel_value_symmetric_exhaustive():
    ms = model_space("tree-boundary", 2, 4, 0.6)
    k = RadialKernel("riesz", s=0.8, p=2.0)
    for x in range(16):
        for y in range(16):
            if x != y:
                assert kernel_value(k, ms, x, y) == kernel_value(k, ms, y, x)


def test_norm_constant_kernel(tree6):
    assert kernel_norm_1(constant_kernel(tree6.tree), tree6) == pytest.approx(1.0)


def test_norm_closed_form_level_histogram():
    ms = model_space("tree-boundary", 2, 3, 0.5)
    k = RadialKernel("riesz", s=0.5, p=2.0)
    expected = sum((2 - 1) * 2 ** (3 - 1 - lvl) * 2.0**-3 * (0.5**lvl) ** -0.5
                   for lvl in range(3))
    assert kernel_norm_1(k, ms) == pytest.approx(expected)


def test_norm_linear_in_mass(rng):
    w = rng.random(16) + 0.2
    t1 = build_tree(2, 4, 0.5, w)
    t2 = build_tree(2, 4, 0.5, 2 * w)
    k = RadialKernel("riesz", s=0.75, p=2.0)
    assert kernel_norm_1(k, t2) == pytest.approx(2 * kernel_norm_1(k, t1))


def test_norm_monotone_in_kernel(tree6):
    lo = RadialKernel("radial", level_values=tuple(range(1, 8)))
    hi = RadialKernel("radial", level_values=tuple(2 * v for v in range(1, 8)))
    assert kernel_norm_1(lo, tree6) <= kernel_norm_1(hi, tree6)


def test_norm_stabilizes_with_depth():
    k = RadialKernel("riesz", s=0.75, p=2.0)
    norms = [kernel_norm_1(k, model_space("tree-boundary", 2, n, 0.5))
             for n in range(4, 11)]
    assert np.all(np.diff(norms) > 0)
    bound = kernel_norm_tail_bound(k, model_space("tree-boundary", 2, 4, 0.5))
    assert all(v <= bound + 1e-12 for v in norms)


def test_convolve_trivia(tree6):
    n = tree6.n_leaves
    k = RadialKernel("riesz", s=0.75, p=2.0)
    assert np.allclose(convolve_naive(k, tree6, np.zeros(n)), 0.0)
    assert np.allclose(convolve_fast(k, tree6, np.zeros(n)), 0.0)
    const = constant_kernel(tree6.tree)
    out = convolve_fast(const, tree6, np.full(n, 3.7))
    assert np.allclose(out, 3.7)


def test_convolve_single_spike():
    ms = model_space("tree-boundary", 2, 3, 0.5)
    k = RadialKernel("riesz", s=0.75, p=2.0)
    spike = 5
    f = np.zeros(8)
    f[spike] = 1.0
    out = convolve_naive(k, ms, f)
    for x in range(8):
        if x == spike:
            assert out[x] == 0.0     # no self-interaction
        else:
            expected = kernel_value(k, ms, x, spike) * ms.weights[spike]
            assert out[x] == pytest.approx(expected)


@pytest.mark.parametrize("b,depth", [(2, 4), (2, 7), (3, 4), (2, 10)])
def test_fast_equals_naive(b, depth, rng):
    ms = model_space("tree-boundary", b, depth, 1.0 / b)
    k = RadialKernel("riesz", s=0.75, p=2.0)
    for _ in range(5):
        f = rng.random(ms.n_leaves)
        a = convolve_naive(k, ms, f)
        c = convolve_fast(k, ms, f)
        assert np.max(np.abs(a - c) / np.maximum(np.abs(a), 1e-300)) < 1e-10


def test_fast_equals_naive_custom_weights_and_tables(rng):
    w = rng.random(81) + 0.1
    t = build_tree(3, 4, 0.4, w)
    table = RadialKernel("radial", level_values=tuple(rng.random(5) * 3.0))
    riesz = RadialKernel("riesz", s=0.7, p=2.0)
    for k in (table, riesz):
        for _ in range(5):
            f = rng.standard_normal(81)
            a = convolve_naive(k, t, f)
            c = convolve_fast(k, t, f)
            assert np.max(np.abs(a - c)) <= 1e-12 * max(np.abs(a).max(), 1.0)


def test_fast_linearity(tree6, rng):
    k = RadialKernel("riesz", s=0.6, p=2.0)
    f, g = rng.random(64), rng.random(64)
    lhs = convolve_fast(k, tree6, 2.0 * f + 0.3 * g)
    rhs = 2.0 * convolve_fast(k, tree6, f) + 0.3 * convolve_fast(k, tree6, g)
    assert np.max(np.abs(lhs - rhs)) < 1e-12 * np.max(np.abs(rhs))


def test_convolve_measure_identities(tree6, rng):
    k = RadialKernel("riesz", s=0.75, p=2.0)
    point = np.zeros(64)
    point[11] = 1.0
    out = convolve_measure(k, tree6, point)
    for x in (0, 10, 12, 63):
        assert out[x] == pytest.approx(kernel_value(k, tree6, x, 11))
    f = rng.random(64)
    assert np.allclose(convolve_measure(k, tree6, f * tree6.weights),
                       convolve_fast(k, tree6, f))
    assert np.allclose(convolve_measure(k, tree6, 3.0 * point),
                       3.0 * convolve_measure(k, tree6, point))


def test_young_equality_case(tree6):
    const = constant_kernel(tree6.tree)
    lhs, rhs, ok = young_check(const, tree6, np.ones(64), 2.0)
    assert ok and lhs == pytest.approx(rhs) == pytest.approx(1.0)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0, np.inf])
def test_young_random(p, tree6, rng):
    k = RadialKernel("riesz", s=0.75, p=2.0)
    for _ in range(20):
        f = rng.random(64)
        lhs, rhs, ok = young_check(k, tree6, f, p)
        assert ok, (lhs, rhs)


def test_dyadic_riesz_zero(tree6):
    assert np.allclose(dyadic_riesz_potential(tree6, np.zeros(64), 0.75), 0.0)


def test_dyadic_riesz_point_mass_ratio_bounds(tree6):
    s = 0.75
    c1, c2 = dyadic_riesz_bounds(tree6, s)
    k = RadialKernel("riesz", s=s, p=2.0)
    g = np.zeros(64)
    g[17] = 1.0
    dy = dyadic_riesz_potential(tree6, g, s)
    exact = convolve_naive(k, tree6, g)
    live = exact > 0
    ratio = dy[live] / exact[live]
    assert ratio.min() >= c1 - 1e-12
    assert ratio.max() <= c2 + 1e-12


def test_dyadic_riesz_scale_invariance(cantor6, rng):
    g = rng.random(64)
    a = dyadic_riesz_potential(cantor6, g, 0.8)
    b = dyadic_riesz_potential(cantor6, 5.0 * g, 0.8)
    assert np.allclose(b, 5.0 * a)


def test_lp_norm_inf(rng):
    vals = rng.standard_normal(32)
    w = np.full(32, 1 / 32)
    assert lp_norm(vals, w, np.inf) == pytest.approx(np.abs(vals).max())
