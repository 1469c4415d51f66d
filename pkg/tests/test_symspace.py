import numpy as np
import pytest

import carnot
import models
import symspace
from carnot import CarnotPoint
from symspace import HorocyclicPoint, WarpedMetric
from errors import DegenerateInputError


def _point(a, n, algebra):
    return HorocyclicPoint(np.atleast_1d(a), CarnotPoint(n, algebra))


def test_hyperbolic_metric_shape():
    metric = WarpedMetric.hyperbolic(3)
    assert metric.rank == 1
    assert metric.algebra.dim == 2
    assert metric.closed_form
    assert np.isclose(metric.hyperbolic_kappa, 1.0)
    assert np.allclose(metric.leaf_weights([1.0]), np.exp(2.0))


def test_sl3_metric_shape():
    metric = models.get_model('sl3r').metric
    assert metric.rank == 2
    assert not metric.closed_form
    assert metric.strata == [1, 1, 2]
    # every exponent has norm 2 with the sqrt(2) normalization
    assert np.allclose(np.linalg.norm(metric.exponents, axis=1), 2.0)


def test_f_map_hyperbolic():
    metric = WarpedMetric.hyperbolic(3)
    g = CarnotPoint([1.0, -2.0], metric.algebra)
    assert np.allclose(symspace.F_map([1.5], g, metric).coords, np.exp(-1.5) * g.coords)
    assert np.allclose(metric.f_scale([1.5]) * g.coords, np.exp(-1.5) * g.coords)


def test_f_map_is_automorphism(rng):
    metric = models.get_model('sl3r').metric
    algebra = metric.algebra
    a = rng.normal(size=2)
    x, y = rng.normal(size=3), rng.normal(size=3)
    lhs = symspace.F_map(a, CarnotPoint(algebra.multiply(x, y), algebra), metric).coords
    rhs = algebra.multiply(symspace.F_map(a, CarnotPoint(x, algebra), metric).coords,
                           symspace.F_map(a, CarnotPoint(y, algebra), metric).coords)
    assert np.allclose(lhs, rhs)


def test_hyperbolic_distance_values():
    # same leaf, unit horizontal step: cosh d = 1 + 1 / 2
    assert np.isclose(symspace.hyperbolic_distance(0.0, [0.0], 0.0, [1.0]), np.arccosh(1.5))
    assert np.isclose(symspace.hyperbolic_distance(0.0, [0.0], 0.0, [2.0]), np.arccosh(3.0))
    assert np.isclose(symspace.hyperbolic_distance(0.0, [0.0], 0.0, [2.0]), 1.7627, atol=1e-4)
    # vertical geodesic
    assert np.isclose(symspace.hyperbolic_distance(-1.0, [3.0], 2.0, [3.0]), 3.0)


def test_closed_form_distance_on_leaves():
    metric = WarpedMetric.hyperbolic(3)
    for a in range(-5, 6):
        f = metric.f_scale([a])
        pa = np.array([[a]], dtype=float)
        d = symspace.closed_form_distance(pa, np.zeros((1, 2)), pa, f * np.array([[1.0, 0.0]]), metric)
        assert np.isclose(d[0], np.arccosh(1.5))
        assert np.isclose(d[0], 0.962424, atol=1e-6)


def test_distance_gk_closed_form_is_exact():
    metric = WarpedMetric.hyperbolic(2)
    p, q = _point(0.0, [0.0], metric.algebra), _point(1.0, [2.0], metric.algebra)
    b = symspace.distance_GK(p, q, metric)
    assert b.lower == b.upper


def test_optimizer_matches_closed_form():
    metric = WarpedMetric.hyperbolic(2)
    p, q = _point(0.0, [0.0], metric.algebra), _point(0.0, [3.0], metric.algebra)
    exact = symspace.distance_GK(p, q, metric).upper
    res = symspace.optimized_upper_bound(p, q, metric)
    assert res.length >= exact * (1 - 1e-3)
    assert res.length <= exact * 1.02


def test_path_length_vertical():
    metric = WarpedMetric.hyperbolic(3)
    path = np.array([[0.0, 0.5, 0.5], [2.0, 0.5, 0.5]])
    assert np.isclose(symspace.path_length_GK(path, metric), 2.0)
    with pytest.raises(DegenerateInputError):
        symspace.path_length_GK(path[:1], metric)


def test_path_length_leaf():
    metric = WarpedMetric.hyperbolic(3)
    path = [[0.0, 0.0], [1.0, 0.0]]
    assert np.isclose(symspace.path_length_leaf(path, [1.0], metric), np.e)


def test_distance_gk_bounds_sl3(rng):
    metric = models.get_model('sl3r').metric
    algebra = metric.algebra
    p = _point(rng.normal(size=2) * 0.3, rng.normal(size=3), algebra)
    q = _point(rng.normal(size=2) * 0.3, rng.normal(size=3), algebra)
    b = symspace.distance_GK(p, q, metric)
    assert 0 < b.lower <= b.upper
    assert b.lower >= np.linalg.norm(p.a - q.a) - 1e-12
    assert symspace.distance_GK(p, p, metric) == (0.0, 0.0)


def test_ambient_lower_bound_below_leaf_length(rng):
    metric = models.get_model('sl3r').metric
    for _ in range(10):
        a = rng.normal(size=(1, 2)) * 0.5
        x, y = rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
        low = symspace.ambient_lower_bound(a, x, a, y, metric)[0]
        leaf = symspace.path_length_GK(np.vstack([np.hstack([a, x]), np.hstack([a, y])]), metric)
        assert low <= leaf + 1e-9


def test_leaf_distance_scales_with_weights():
    metric = WarpedMetric.hyperbolic(3)
    x, y = CarnotPoint([0.0, 0.0], metric.algebra), CarnotPoint([1.0, 0.0], metric.algebra)
    b = symspace.leaf_distance_da([2.0], x, y, metric)
    assert np.isclose(b.lower, np.exp(2.0))
    assert np.isclose(b.upper, np.exp(2.0))


def test_distortion_profile_h3():
    metric = WarpedMetric.hyperbolic(3)
    algebra = metric.algebra
    e = CarnotPoint([0.0, 0.0], algebra)
    pairs = [(e, CarnotPoint([s, 0.0], algebra)) for s in (2.0, 4.0, 8.0, 16.0, 32.0)]
    profile = symspace.distortion_profile([0.0], pairs, metric)
    assert len(profile.rows) == 5
    assert 0 < profile.c1 <= profile.c2
    # 2 asinh(s / 2) against ln s stays between 1.5 and 2.6 on this range
    assert 1.5 <= profile.c1 and profile.c2 <= 2.6


def test_distortion_profile_rejects_short_pairs():
    metric = WarpedMetric.hyperbolic(3)
    algebra = metric.algebra
    pairs = [(CarnotPoint([0.0, 0.0], algebra), CarnotPoint([0.5, 0.0], algebra))]
    with pytest.raises(DegenerateInputError):
        symspace.distortion_profile([0.0], pairs, metric)


def test_char_eval():
    assert np.isclose(symspace.char_eval([1.0], [2.0]), np.exp(2.0))
    values = symspace.char_eval([1.0, -1.0], np.array([[0.0, 0.0], [1.0, 3.0]]))
    assert np.allclose(values, [1.0, np.exp(-2.0)])


def test_leaf_isometry_sl3():
    metric = models.get_model('sl3r').metric
    algebra = metric.algebra
    a = np.array([0.7, -0.4])
    x, y = CarnotPoint([0.0, 0.0, 0.0], algebra), CarnotPoint([1.0, 2.0, 1.5], algebra)
    base = carnot.distance_d0(x, y, metric.base_metric())
    leaf = symspace.leaf_distance_da(a, symspace.F_map(a, x, metric), symspace.F_map(a, y, metric), metric)
    assert np.isclose(leaf.upper, base.upper, rtol=1e-3)
    assert leaf.lower <= base.upper * (1 + 1e-3)
    assert base.lower <= leaf.upper * (1 + 1e-3)


def test_leaf_length_preserved(rng):
    metric = models.get_model('sl3r').metric
    algebra = metric.algebra
    path = [CarnotPoint(c, algebra) for c in rng.normal(size=(6, 3))]
    for a in (np.array([1.0, 0.0]), np.array([-0.5, 2.0])):
        moved = [symspace.F_map(a, p, metric) for p in path]
        assert np.isclose(symspace.path_length_leaf(moved, a, metric),
                          symspace.path_length_leaf(path, np.zeros(2), metric))


@pytest.mark.parametrize('s, ratio', [(10.0, 2.0086), (100.0, 2.00004), (1000.0, 2.0000003)])
def test_log_distortion_h3(s, ratio):
    metric = WarpedMetric.hyperbolic(3)
    algebra = metric.algebra
    for a in (-3.0, 0.0, 3.0):
        e, g = CarnotPoint([0.0, 0.0], algebra), CarnotPoint([s, 0.0], algebra)
        p, q = symspace.F_map([a], e, metric), symspace.F_map([a], g, metric)
        d = symspace.closed_form_distance([[a]], p.coords[None, :], [[a]], q.coords[None, :], metric)[0]
        assert np.isclose(d / np.log(s), ratio, atol=1e-4)
        assert abs(d / np.log(s) - 2.0) <= 0.2


def test_distortion_constants_do_not_depend_on_leaf():
    metric = WarpedMetric.hyperbolic(3)
    algebra = metric.algebra
    e = CarnotPoint([0.0, 0.0], algebra)
    pairs = [(e, CarnotPoint([s, 0.0], algebra)) for s in (4.0, 16.0, 64.0)]
    profiles = [symspace.distortion_profile([a], pairs, metric) for a in range(-3, 4)]
    for profile in profiles[1:]:
        assert np.isclose(profile.c1, profiles[0].c1, rtol=1e-9)
        assert np.isclose(profile.c2, profiles[0].c2, rtol=1e-9)


def test_distortion_upper_constant_sl3():
    metric = models.get_model('sl3r').metric
    algebra = metric.algebra
    pairs = [(CarnotPoint([0.0, 0.0, 0.0], algebra), CarnotPoint([6.0, 0.0, 0.0], algebra))]
    first = symspace.distortion_profile([0.0, 0.0], pairs, metric)
    second = symspace.distortion_profile([1.0, -1.0], pairs, metric)
    assert np.isclose(first.c2, second.c2, rtol=1e-2)


def test_closed_form_triangle_inequality(rng):
    metric = WarpedMetric.hyperbolic(3)
    a = rng.normal(size=(3, 200, 1))
    n = rng.normal(size=(3, 200, 2)) * 2.0

    def d(x, y):
        return symspace.closed_form_distance(a[x], n[x], a[y], n[y], metric)

    assert np.all(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-9)
    assert np.all(d(0, 1) >= 0)
    assert np.allclose(d(0, 1), d(1, 0))


@pytest.mark.parametrize('p, q', [
    ((0.0, [0.0, 0.0]), (1.0, [2.0, 1.0])),
    ((-1.0, [0.0, 0.0]), (1.0, [1.0, -1.0])),
    ((0.5, [0.0, 0.0]), (0.5, [0.0, 4.0])),
])
def test_optimizer_matches_closed_form_h3(p, q):
    metric = WarpedMetric.hyperbolic(3)
    p, q = _point(p[0], p[1], metric.algebra), _point(q[0], q[1], metric.algebra)
    exact = symspace.distance_GK(p, q, metric).upper
    assert exact <= 5.0
    res = symspace.optimized_upper_bound(p, q, metric)
    assert res.length >= exact * (1 - 1e-3)
    assert res.length <= exact * 1.02
