from dataclasses import replace

import numpy as np
import pytest

import carnot
import models
import netaction
from carnot import Bounds, CarnotPoint
from errors import DegenerateInputError, DimensionMismatchError, InfeasibleNetError


def test_h3_window_size(h3_window):
    assert len(h3_window) == 125
    assert len(h3_window.leaves()) == 5
    assert h3_window.a_box == ((-2, 2),)
    assert h3_window.margin.lower <= 1.0


def test_window_embedding(h3_window):
    f = h3_window.metric.f_scale(h3_window.a)
    assert np.allclose(h3_window.n, f * h3_window.g)
    i = h3_window.index_of([1], [1.0, -2.0])[0]
    assert i >= 0
    assert np.allclose(h3_window.g[i], [1.0, -2.0])
    assert h3_window.index_of([7], [0.0, 0.0])[0] == -1


def test_normalize_box():
    assert netaction._normalize_box(3, 2) == ((3, 3), (3, 3))
    assert netaction._normalize_box((0, 1), 2) == ((0, 1), (0, 1))
    assert netaction._normalize_box([(0, 1), (-1, 2)], 2) == ((0, 1), (-1, 2))
    with pytest.raises(DimensionMismatchError):
        netaction._normalize_box((2, 1), 1)


def test_build_net_infeasible():
    bundle = models.get_model('sl3r')
    spec = replace(bundle.lattice, margin=Bounds(0.5, 0.6))
    with pytest.raises(InfeasibleNetError, match='rescale_lattice'):
        netaction.build_net(spec, bundle.metric, (0, 0), 1)


def test_certified_separation_h3():
    bundle = models.get_model('h3')
    assert np.isclose(netaction.certified_separation(bundle.lattice, bundle.metric), np.arccosh(1.5))


def test_act_composition(sl3r_window, rng):
    metric = sl3r_window.metric
    algebra = sl3r_window.spec.algebra
    p = netaction.NetPoint.make([0, 1], CarnotPoint(rng.normal(size=3), algebra), metric)
    d1, d2 = CarnotPoint(rng.normal(size=3), algebra), CarnotPoint(rng.normal(size=3), algebra)
    lhs = netaction.act(d1, netaction.act(d2, p, metric), metric)
    rhs = netaction.act(d1 * d2, p, metric)
    assert np.allclose(lhs.g.coords, rhs.g.coords)
    assert np.allclose(lhs.embedded.n.coords, rhs.embedded.n.coords)
    assert np.array_equal(lhs.a, p.a)


def test_displacement_is_leaf_constant_h3():
    bundle = models.get_model('h3')
    window = netaction.build_net(bundle.lattice, bundle.metric, (-5, 5), 1)
    profile = netaction.displacement_profile('a', window)
    assert len(profile.leaf_rows) == 11
    for row in profile.leaf_rows:
        assert np.isclose(row['sup'], 0.962424, atol=1e-6)
    assert np.isclose(profile.sup, np.arccosh(1.5))
    assert np.isclose(profile.d0.lower, 1.0)
    assert profile.C is None
    assert profile.boundary_excluded == len(window) - 11


def test_displacement_envelope_h3():
    bundle = models.get_model('h3')
    window = netaction.build_net(bundle.lattice, bundle.metric, (-2, 2), 1)
    for s in range(2, 33):
        profile = netaction.displacement_profile(np.array([float(s), 0.0]), window, word=f'a^{s}')
        assert np.isclose(profile.sup, 2 * np.arcsinh(s / 2))
        assert profile.within_envelope
        assert profile.C == pytest.approx(profile.sup / np.log(s))


def test_displacement_rejects_identity(h3_window):
    with pytest.raises(DegenerateInputError):
        netaction.displacement_profile('aA', h3_window)


def test_displacement_sl3r(sl3r_window):
    profile = netaction.displacement_profile('a', sl3r_window)
    assert 0 < profile.sup_lower <= profile.sup
    assert np.isclose(profile.d0.lower, 3.0)
    assert profile.C == pytest.approx(profile.sup / np.log(3.0))
    assert len(profile.leaf_rows) == 4


def test_freeness(h3_window, sl3r_window):
    for window in (h3_window, sl3r_window):
        report = netaction.freeness_check(window, 2)
        assert report['free']
        assert report['fixed_points'] == 0
    with pytest.raises(DegenerateInputError):
        netaction.freeness_check(h3_window, 0)


def test_udbg_h3(h3_window):
    report = netaction.udbg_report(h3_window)
    assert np.isclose(report['min_separation'], np.arccosh(1.5))
    assert np.isclose(report['same_leaf_separation'], np.arccosh(1.5))
    assert np.isclose(report['cross_leaf_separation'], 1.0)
    assert len(report['ball_counts']) == 4
    assert report['points'] == 125


def test_udbg_sl3r(sl3r_window):
    report = netaction.udbg_report(sl3r_window)
    assert report['min_separation'] >= 0.5
    assert report['margin'][0] > 1.0


def test_window_distance_bounds_h3(h3_window):
    assert h3_window.metric_space('upper') is h3_window.metric_space('lower')
    i, j = np.triu_indices(len(h3_window), k=1)
    assert np.allclose(h3_window.distance_upper(i, j), h3_window.distance_lower(i, j))
    with pytest.raises(DegenerateInputError):
        h3_window.metric_space('exact')


def test_window_distance_bounds_sl3r(sl3r_window):
    low = sl3r_window.metric_space('lower').matrix()
    up = sl3r_window.metric_space('upper').matrix()
    assert np.all(up >= low - 1e-12)
    assert np.allclose(up, up.T)
    assert np.any(up > low + 1e-6)
    # identities of the leaves sit at n = 0, joined by vertical segments
    ids = np.flatnonzero(sl3r_window.lengths == 0)
    assert len(ids) == 4
    for x, y in zip(*np.triu_indices(len(ids), k=1)):
        expected = np.linalg.norm(sl3r_window.a[ids[x]] - sl3r_window.a[ids[y]])
        assert np.isclose(up[ids[x], ids[y]], expected)


def test_distance_upper_same_leaf_segment_sl3r(sl3r_window):
    algebra, metric = sl3r_window.spec.algebra, sl3r_window.metric
    i, j = np.triu_indices(len(sl3r_window), k=1)
    same = np.all(sl3r_window.a[i] == sl3r_window.a[j], axis=1)
    i, j = i[same], j[same]
    p, d = sl3r_window.n[i], sl3r_window.n[j] - sl3r_window.n[i]
    # constant left-trivialized velocity of a straight step-2 segment
    omega = d - 0.5 * algebra.bracket(p, d)
    expected = np.sqrt(np.sum(metric.leaf_weights(sl3r_window.a[i]) * omega ** 2, axis=1))
    assert np.allclose(sl3r_window.distance_upper(i, j), expected)


def test_udbg_single_point():
    bundle = models.get_model('h3')
    window = netaction.build_net(bundle.lattice, bundle.metric, (0, 0), 0)
    report = netaction.udbg_report(window, [1.0, 2.0])
    assert report['min_separation'] is None
    assert report['ball_counts'] == [1, 1]


def test_probe_grid(h3_window):
    probes = netaction.probe_grid(h3_window, 16, seed=3)
    assert probes.shape == (16, 3)
    assert np.allclose(probes[:, 0], -0.5)
    assert np.all((probes[:, 1:] >= 0) & (probes[:, 1:] <= 1))
    assert np.array_equal(probes, netaction.probe_grid(h3_window, 16, seed=3))


def test_density_h3(h3_window):
    report = netaction.density_report(h3_window, netaction.probe_grid(h3_window, 32))
    assert report.excluded == 0
    assert 0 < report.epsilon < 2.0
    # a probe sitting on a net point has distance 0
    exact = netaction.density_report(h3_window, [[0.0, 1.0, 0.0]])
    assert np.isclose(exact.epsilon, 0.0)


def test_density_flags_boundary_probes(h3_window):
    report = netaction.density_report(h3_window, [[2.0, 0.0, 0.0]])
    assert report.epsilon is None
    assert report.excluded == 1
    assert not report.rows[0]['trusted']


def test_density_sl3r(sl3r_window):
    probes = netaction.probe_grid(sl3r_window, 8, leaf=[0.5, 0.5])
    report = netaction.density_report(sl3r_window, probes)
    assert len(report.rows) == 8
    assert all(row['distance'] > 0 for row in report.rows)


def test_window_action_h3(h3_window):
    action = netaction.window_action(h3_window)
    assert sorted(action.generators) == ['A', 'B', 'a', 'b']
    origin = h3_window.index_of([0], [0.0, 0.0])[0]
    j = action.moves['a'][origin]
    assert np.allclose(h3_window.g[j], [1.0, 0.0])
    assert h3_window.a[j][0] == 0
    far = h3_window.index_of([0], [3.0, 0.0])[0]
    assert action.moves['a'][far] == -1


def test_orbit_check(h3_window, sl3r_window):
    for window in (h3_window, sl3r_window):
        report = netaction.orbit_check(window)
        assert report['ok']
        assert report['classes'] == len(window.leaves())


def test_subgroup_action(sl3r_window):
    report = netaction.subgroup_action(sl3r_window, ['a', 'abAB'], L=2)
    assert report['abelian']
    assert report['free']
    assert report['elements'] == 12
    assert set(report['displacement']) == {'a', 'abAB'}
    assert all(v > 0 for v in report['displacement'].values())


def test_window_json(h3_window):
    obj = h3_window.to_json()
    assert len(obj['points']) == 125
    assert obj['a_box'] == [[-2, 2]]
