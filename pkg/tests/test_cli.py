import json
import os.path as osp
import re

import numpy as np
import pytest
from click.testing import CliRunner

import cli
import netaction
from output import read_csv


@pytest.fixture
def run(tmp_path):
    runner = CliRunner()

    def invoke(*args, config=None, out='out'):
        argv = list(args) + ['--out', str(tmp_path / out)]
        if config is not None:
            path = tmp_path / f'{args[0]}-{out}.json'
            path.write_text(json.dumps(config))
            argv += ['--config', str(path)]
        return runner.invoke(cli.cli, argv)

    invoke.dir = tmp_path
    return invoke


def _json(run, name, out='out'):
    with open(osp.join(run.dir, out, f'{name}.json')) as fi:
        return json.load(fi)


def _csv(run, name, out='out'):
    return read_csv(osp.join(run.dir, out, f'{name}.csv'))


def test_group_info_sl3r(run):
    result = run('group-info', '--model', 'sl3r')
    assert result.exit_code == 0, result.output
    report = _json(run, 'group_info')
    assert report['roots']['step'] == 2
    assert report['nilpotent']['strata_dims'] == [2, 1]
    assert report['iwasawa']['max_reconstruction'] < 1e-9
    _, header, rows = _csv(run, 'group_info')
    assert header[:2] == ['sample', 'reconstruction']
    assert len(rows) == 20


def test_group_info_h3(run):
    result = run('group-info')
    assert result.exit_code == 0, result.output
    report = _json(run, 'group_info')
    assert report['model'] == 'h3'
    assert 'iwasawa' not in report


def test_net_build_h3(run):
    result = run('net-build')
    assert result.exit_code == 0, result.output
    provenance, header, rows = _csv(run, 'net')
    assert provenance.startswith('# config_hash=')
    assert header == ['a0', 'word', 'length', 'g0', 'g1', 'n0', 'n1']
    assert len(rows) == 125
    report = _json(run, 'net')
    assert report['points'] == 125
    assert report['freeness']['free']
    assert report['orbit_check']['ok']


def test_displace_h3(run):
    result = run('displace')
    assert result.exit_code == 0, result.output
    _, header, rows = _csv(run, 'displace')
    assert header == ['a0', 'generator', 'word', 'displacement_lower', 'displacement_upper']
    # 13 interior ball points on each of 5 leaves, for generators a and b
    assert len(rows) == 130
    assert all(np.isclose(float(r[3]), np.arccosh(1.5)) for r in rows)
    report = _json(run, 'displace')
    assert set(report['generators']) == {'a', 'b'}
    assert report['within_envelope']


def test_displace_custom_words(run):
    result = run('displace', config={'action_generators': ['aa', 'ab']})
    assert result.exit_code == 0, result.output
    report = _json(run, 'displace')
    assert set(report['generators']) == {'aa', 'ab'}
    assert report['window_C'] is not None


def test_udbg_h3(run):
    result = run('udbg')
    assert result.exit_code == 0, result.output
    report = _json(run, 'udbg')
    assert np.isclose(report['min_separation'], np.arccosh(1.5))
    assert report['density']['probes'] == 64
    assert report['density']['epsilon'] > 0
    _, header, rows = _csv(run, 'udbg')
    assert header == ['r', 'ball_count']
    assert len(rows) == 4


@pytest.mark.parametrize('compare', ['line', 'sublattice'])
def test_quotient_h3(run, compare):
    result = run('quotient', config={'quotient_compare': compare})
    assert result.exit_code == 0, result.output
    report = _json(run, 'quotient')
    assert report['classes'] == 5
    assert report['axioms']['passed']
    assert report['compare'] == compare
    assert 0.4 <= report['constants']['lower'] <= report['constants']['upper'] <= 2.5
    if compare == 'sublattice':
        # induced orbits are the lattice orbits
        assert np.isclose(report['constants']['lower'], 1.0)
        assert np.isclose(report['constants']['upper'], 1.0)
    assert report['flags']['truncated'] == [0, 4]
    _, header, rows = _csv(run, 'quotient')
    assert header == ['class_i', 'class_j', 'a_i0', 'a_j0', 'distance_lower', 'distance_upper']
    assert len(rows) == 10
    for row in rows:
        gap = abs(float(row[2]) - float(row[3]))
        assert gap - 1e-9 <= float(row[4]) <= gap + 0.5
        # exact distance on h3
        assert float(row[4]) == float(row[5])


def test_quotient_sl3r(run):
    result = run('quotient', config={'model': 'sl3r', 'lattice_rescale': 3.0, 'a_box': [0, 1], 'ball_radius': 1})
    assert result.exit_code == 0, result.output
    report = _json(run, 'quotient')
    assert report['classes'] == 4
    assert report['axioms']['passed']
    assert report['model_check']['dimension_match']
    _, header, rows = _csv(run, 'quotient')
    assert header == ['class_i', 'class_j', 'a_i0', 'a_i1', 'a_j0', 'a_j1', 'distance_lower', 'distance_upper']
    assert len(rows) == 6
    for row in rows:
        a_i, a_j = np.array(row[2:4], dtype=float), np.array(row[4:6], dtype=float)
        lower, upper = float(row[6]), float(row[7])
        assert lower <= upper + 1e-9
        # the identity sits at n = 0 in every leaf, so the vertical move is available
        assert np.isclose(upper, np.linalg.norm(a_i - a_j))


def test_udbg_sl3r(run):
    result = run('udbg', config={'model': 'sl3r', 'lattice_rescale': 3.0, 'a_box': [0, 1], 'ball_radius': 1,
                                 'density_grid': 2})
    assert result.exit_code == 0, result.output
    report = _json(run, 'udbg')
    assert report['points'] == 20
    assert report['min_separation'] > 0
    assert report['cross_leaf_separation'] >= 1.0 - 1e-9
    assert report['density']['probes'] == 8
    # no leaf lies a full step inside the a-box
    assert report['density']['epsilon'] is None
    assert report['density']['excluded'] == 8


def test_quotient_without_comparison(run):
    result = run('quotient', config={'quotient_compare': 'none'})
    assert result.exit_code == 0, result.output
    assert 'constants' not in _json(run, 'quotient')


def test_folner_z2(run):
    result = run('folner')
    assert result.exit_code == 0, result.output
    _, header, rows = _csv(run, 'folner')
    assert header == ['n', 'size', 'boundary', 'ratio']
    assert len(rows) == 50
    assert rows[-1][:3] == ['50', '5101', '204']
    report = _json(run, 'folner')
    assert report['verdict'] == 'amenable-consistent'
    assert np.isclose(report['last_ratio'], 204 / 5101)


def test_folner_f2(run):
    result = run('folner', config={'folner_space': 'f2', 'folner_n': 12})
    assert result.exit_code == 0, result.output
    _, _, rows = _csv(run, 'folner')
    # capped at n = 8
    assert len(rows) == 8
    assert all(float(r[3]) >= 1.9 for r in rows[2:])
    assert _json(run, 'folner')['verdict'] == 'nonamenable-consistent'


def test_match(run):
    result = run('match', config={'match_size': 30})
    assert result.exit_code == 0, result.output
    report = _json(run, 'match')
    assert report['perfect']
    assert report['matched'] == 900
    assert np.isclose(report['max_displacement'], 0.5)
    _, header, rows = _csv(run, 'match')
    assert header == ['a', 'b', 'distance']
    assert len(rows) == 900


def test_match_hall_violation(run):
    result = run('match', config={'match_size': 5, 'match_radius': 0.2})
    assert result.exit_code == 0, result.output
    report = _json(run, 'match')
    assert not report['perfect']
    assert len(report['witness_neighbors']) < len(report['witness'])


def test_growth_is_deterministic(run):
    assert run('growth', '--seed', '7', out='first').exit_code == 0
    assert run('growth', '--seed', '7', out='second').exit_code == 0
    first, second = _csv(run, 'growth', 'first'), _csv(run, 'growth', 'second')
    assert first == second
    assert re.fullmatch(r"# config_hash=[0-9a-f]{16} seed=7", first[0])
    assert [int(r[1]) for r in first[2]] == [41, 145, 313, 545]


@pytest.mark.parametrize('verb', ['displace', 'udbg', 'quotient'])
def test_artifacts_are_deterministic(run, verb):
    assert run(verb, '--seed', '3', out='first').exit_code == 0
    assert run(verb, '--seed', '3', out='second').exit_code == 0
    with open(osp.join(run.dir, 'first', f'{verb}.csv'), 'rb') as fi:
        first = fi.read()
    with open(osp.join(run.dir, 'second', f'{verb}.csv'), 'rb') as fi:
        second = fi.read()
    assert first == second
    assert first.startswith(b'# config_hash=')


def test_seed_changes_provenance(run):
    run('growth', '--seed', '1', out='one')
    run('growth', '--seed', '2', out='two')
    assert _csv(run, 'growth', 'one')[0] != _csv(run, 'growth', 'two')[0]


def test_exit_code_unknown_model(run):
    assert run('growth', '--model', 'bogus').exit_code == 2


def test_exit_code_unknown_config_key(run):
    assert run('growth', config={'no_such_option': 1}).exit_code == 2


def test_exit_code_bad_generator_letter(run):
    assert run('displace', config={'action_generators': ['q']}).exit_code == 2


def test_exit_code_usage_error(run):
    assert run('growth', '--seed', '-1').exit_code == 2


def test_exit_code_infeasible_net(run):
    result = run('net-build', config={'model': 'sl3r', 'lattice_rescale': 1.0})
    assert result.exit_code == 3


def test_exit_code_degenerate_input(run):
    assert run('displace', config={'action_generators': ['aA']}).exit_code == 4


def test_exit_code_unexpected_error(run, monkeypatch):
    def singular(*args, **kwargs):
        raise np.linalg.LinAlgError('Singular matrix')

    monkeypatch.setattr(netaction, 'udbg_report', singular)
    result = run('udbg')
    assert result.exit_code == 4
    assert not isinstance(result.exception, np.linalg.LinAlgError)
