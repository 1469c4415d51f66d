# Experiment drivers. Every verb reads the settings (defaults < --config file < flags),
# logs a summary table and writes <out>/<verb>.csv and/or <out>/<verb>.json.

import functools
import itertools
import math
from dataclasses import dataclass, field
import click
import numpy as np
from loguru import logger
from tabulate import tabulate
import macros
import settings
import utils
import liecore
import carnot
import coarse
import models
import netaction
import quotient
from output import ArtifactWriter
from errors import CoarseModelError, ConfigError, InfeasibleNetError, LatticeCollisionError


EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_DEGENERATE = 4
FREE_GROUP_MAX_N = 8
ORBIT_CHECK_MAX_POINTS = 600


@dataclass
class ExperimentConfig:
    model: str
    lattice_rescale: float
    a_box: list
    ball_radius: int
    action_generators: list
    seed: int
    out_dir: str
    options: dict = field(repr=False, default_factory=dict)

    @classmethod
    def from_settings(cls, effective: dict) -> 'ExperimentConfig':
        return cls(str(effective['model']), float(effective['lattice_rescale']), list(effective['a_box']),
                   int(effective['ball_radius']), list(effective['action_generators']), int(effective['seed']),
                   str(effective['out_dir']), effective)

    @property
    def config_hash(self) -> str:
        return utils.config_hash({k: v for k, v in self.options.items() if k != 'out_dir'})

    def writer(self) -> ArtifactWriter:
        return ArtifactWriter(self.out_dir, self.config_hash, self.seed)

    def bundle(self) -> models.Model:
        return models.get_model(self.model)

    def lattice(self, bundle: models.Model) -> carnot.LatticeSpec:
        s = self.lattice_rescale if self.lattice_rescale > 0 else bundle.default_rescale
        return carnot.rescale_lattice(bundle.lattice, s, bundle.metric.base_metric())

    def window(self, bundle: models.Model) -> netaction.NetWindow:
        return netaction.build_net(self.lattice(bundle), bundle.metric, self.a_box, self.ball_radius)


def _exit_code(e: Exception) -> int:
    if isinstance(e, (ConfigError, KeyError)):
        return EXIT_CONFIG
    if isinstance(e, (InfeasibleNetError, LatticeCollisionError)):
        return EXIT_INFEASIBLE
    return EXIT_DEGENERATE


def _exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (click.exceptions.ClickException, click.exceptions.Exit, click.exceptions.Abort):
            raise
        except Exception as e:
            if macros.RAISE_CLI:
                raise
            if isinstance(e, (CoarseModelError, KeyError)):
                logger.error(f'{type(e).__name__}: {e}')
            else:
                logger.opt(exception=e).error(f'Unexpected {type(e).__name__}: {e}')
            click.get_current_context().exit(_exit_code(e))
    return wrapper


def experiment_options(fn):
    fn = click.option('--model', type=str, default=None, help='Registered model tag')(fn)
    fn = click.option('--out', 'out_dir', type=click.Path(file_okay=False), default=None,
                      help='Output directory')(fn)
    fn = click.option('--seed', type=click.IntRange(0, 2 ** 64 - 1), default=None, help='Seed of the run')(fn)
    fn = click.option('--config', 'config_file', type=click.Path(exists=True, dir_okay=False), default=None,
                      help='JSON config file')(fn)
    return fn


def _load(config_file, seed, out_dir, model) -> ExperimentConfig:
    effective = utils.overwrite_settings(config_file, seed=seed, out_dir=out_dir, model=model)
    return ExperimentConfig.from_settings(effective)


def _flat_header(prefix: str, k: int):
    return [f'{prefix}{i}' for i in range(k)]


@click.group()
@click.option('--verbose', '-v', is_flag=True, help='Log numeric internals')
def cli(verbose):
    """Coarse models of homogeneous spaces on finite windows."""
    utils.setup_logger('DEBUG' if verbose else None)


@cli.command('group-info')
@experiment_options
@_exit_codes
def cmd_group_info(config_file, seed, out_dir, model):
    cfg = _load(config_file, seed, out_dir, model)
    bundle = cfg.bundle()
    algebra = bundle.algebra
    writer = cfg.writer()
    report = {
        'model': bundle.tag,
        'description': bundle.description,
        'nilpotent': {'name': algebra.name, 'strata_dims': list(algebra.strata_dims), 'step': algebra.step,
                      'generates': carnot.verify_stratification(algebra)['generates']},
        'characters': {name: e.tolist() for name, e in zip(bundle.metric.names, bundle.metric.exponents)},
    }
    if bundle.algebra_tag:
        datum = liecore.restricted_roots(bundle.algebra_tag)
        report['roots'] = datum.summary()
        n = liecore.sl_rank(bundle.algebra_tag)
        rng = np.random.default_rng(cfg.seed)
        rows = []
        for k in range(int(settings.iwasawa_samples)):
            g = liecore.random_sl(n, rng)
            f = liecore.iwasawa_decompose(g)
            rows.append([k, float(np.abs(f.product() - g.entries).max()),
                         float(np.abs(f.k.entries.T @ f.k.entries - np.eye(n)).max()),
                         float(np.diag(f.a.entries).min()), float(np.abs(np.tril(f.n.entries, -1)).max())])
        writer.csv('group_info', ['sample', 'reconstruction', 'orthogonality', 'min_a', 'n_lower'], rows)
        res = np.array([r[1:] for r in rows])
        report['iwasawa'] = {'samples': len(rows), 'max_reconstruction': float(res[:, 0].max()),
                             'max_orthogonality': float(res[:, 1].max()), 'min_a': float(res[:, 2].min())}
    else:
        report['roots'] = {'rank': bundle.rank, 'positive_roots': list(bundle.metric.names), 'step': algebra.step}
    writer.json('group_info', report)
    logger.success(f'{bundle.tag}\n' + utils.treeify(report))


@cli.command('net-build')
@experiment_options
@_exit_codes
def cmd_net_build(config_file, seed, out_dir, model):
    cfg = _load(config_file, seed, out_dir, model)
    bundle = cfg.bundle()
    window = cfg.window(bundle)
    writer = cfg.writer()
    rank, dim = window.rank, window.spec.algebra.dim
    header = _flat_header('a', rank) + ['word', 'length'] + _flat_header('g', dim) + _flat_header('n', dim)
    rows = ([*a, w, l, *g, *n] for a, w, l, g, n in
            zip(window.a.tolist(), window.words, window.lengths.tolist(), window.g.tolist(), window.n.tolist()))
    writer.csv('net', header, rows)
    report = {'points': len(window), 'leaves': len(window.leaves()), 'lattice': window.spec.description,
              'scale': window.spec.scale, 'margin': list(window.margin), 'freeness': netaction.freeness_check(window)}
    if len(window) <= ORBIT_CHECK_MAX_POINTS:
        report['orbit_check'] = netaction.orbit_check(window)
    writer.json('net', report)
    logger.success(tabulate([[bundle.tag, len(window), report['leaves'], report['freeness']['free']]],
                            headers=['model', 'points', 'leaves', 'free']))


@cli.command('displace')
@experiment_options
@_exit_codes
def cmd_action_displace(config_file, seed, out_dir, model):
    cfg = _load(config_file, seed, out_dir, model)
    bundle = cfg.bundle()
    window = cfg.window(bundle)
    writer = cfg.writer()
    generators = cfg.action_generators or list(window.spec.names)
    profiles = [netaction.displacement_profile(word, window) for word in generators]
    header = _flat_header('a', window.rank) + ['generator', 'word', 'displacement_lower', 'displacement_upper']
    writer.csv('displace', header, ([*row['a'], p.word, row['word'], row['lower'], row['upper']]
                                    for p in profiles for row in p.rows))
    admissible = [p.C for p in profiles if p.C is not None]
    report = {'generators': {p.word: p.to_json() for p in profiles},
              'window_C': max(admissible) if admissible else None,
              'within_envelope': all(p.within_envelope for p in profiles)}
    if window.spec.algebra.step == 2 and len(window.spec.names) >= 2:
        a, b = window.spec.names[:2]
        sub = netaction.subgroup_action(window, [a, a + b + a.swapcase() + b.swapcase()])
        sub.pop('action')
        report['subgroup'] = sub
    writer.json('displace', report)
    table = [[p.word, p.d0.lower, p.d0.upper, p.sup, p.mean, p.C, p.envelope] for p in profiles]
    logger.success('\n' + tabulate(table, headers=['generator', 'd0_lower', 'd0_upper', 'sup', 'mean', 'C',
                                                   'envelope'], floatfmt='.6f'))


@cli.command('udbg')
@experiment_options
@_exit_codes
def cmd_udbg(config_file, seed, out_dir, model):
    cfg = _load(config_file, seed, out_dir, model)
    bundle = cfg.bundle()
    window = cfg.window(bundle)
    writer = cfg.writer()
    report = netaction.udbg_report(window)
    probes = netaction.probe_grid(window, int(settings.density_grid) ** window.spec.algebra.dim, seed=cfg.seed)
    density = netaction.density_report(window, probes)
    report['density'] = {'epsilon': density.epsilon, 'probes': len(probes), 'excluded': density.excluded}
    for key in ('min_separation', 'cross_leaf_separation', 'same_leaf_separation'):
        if report[key] is None or report[key] == float('inf'):
            report[key] = 'none'
    writer.csv('udbg', ['r', 'ball_count'], zip(report['radii'], report['ball_counts']))
    writer.json('udbg', report)
    logger.success('\n' + tabulate([[report['min_separation'], report['log_slope'], density.epsilon]],
                                   headers=['min_separation', 'log_slope', 'epsilon']))


def _sublattice_quotient(window: netaction.NetWindow, action: coarse.PointedAction, base) -> quotient.QuotientWindow:
    """Quotient by the dilated lattice delta_2(Delta) acting through the group equivalence delta_1/2.

    On a window the induced orbits coincide with the Delta-orbits, so the comparison against the
    Delta-quotient has constants (1, 1) and checks the induction machinery, not the geometry.
    """
    algebra = window.spec.algebra
    group = coarse.CarnotLatticeGroup(algebra)
    names, gens = window.spec.symmetric_generators()
    reps = np.flatnonzero(window.lengths == 0)
    chart = coarse.OrbitChart.build(action, group, dict(zip(names, gens)), reps)
    h_gens = {f'{s}2': algebra.dilate(2.0, g) for s, g in zip(names, gens)}
    induced = coarse.induce_action_from_group_equivalence(
        lambda h: algebra.dilate(0.5, h), lambda g: algebra.dilate(2.0, g), h_gens, group, chart)
    return quotient.build_quotient(base, induced, boundary=window.flat_boundary_mask())


@cli.command('quotient')
@experiment_options
@_exit_codes
def cmd_quotient(config_file, seed, out_dir, model):
    cfg = _load(config_file, seed, out_dir, model)
    bundle = cfg.bundle()
    window = cfg.window(bundle)
    writer = cfg.writer()
    action = netaction.window_action(window)
    base = window.metric_space('upper')
    Q = quotient.build_quotient(base, action, boundary=window.flat_boundary_mask())
    if settings.quotient_require_connected:
        quotient.require_connected(Q)
    D = quotient.class_distance_matrix(Q)
    Q_lower = quotient.build_quotient(window.metric_space('lower'), action, boundary=window.flat_boundary_mask())
    D_lower = quotient.class_distance_matrix(Q_lower)
    leaves = np.array([window.a[Q.members(c)[0]] for c in range(Q.n_classes)])
    report = {'classes': Q.n_classes, 'axioms': quotient.metric_axiom_check(Q),
              'model_check': quotient.coarse_model_check(window, action, window.rank, base),
              'flags': {'truncated': np.flatnonzero(Q.truncated).tolist()}}
    compare = str(settings.quotient_compare)
    if compare == 'line':
        flat = quotient.trivial_quotient(coarse.FiniteMetricSpace.from_coords(leaves))
        report['constants'] = quotient.quotient_bilip_compare(Q, flat, np.arange(Q.n_classes)).to_json()
    elif compare == 'sublattice':
        QH = _sublattice_quotient(window, action, base)
        report['constants'] = quotient.quotient_bilip_compare(Q, QH, quotient.class_correspondence(Q, QH)).to_json()
    report['compare'] = compare
    # chain distances over the lower and the upper window distance; constants and checks use the upper one
    i, j = np.triu_indices(Q.n_classes, k=1)
    header = ['class_i', 'class_j'] + _flat_header('a_i', window.rank) + _flat_header('a_j', window.rank) + \
        ['distance_lower', 'distance_upper']
    writer.csv('quotient', header, ([int(x), int(y), *leaves[x].tolist(), *leaves[y].tolist(),
                                     float(D_lower[x, y]), float(D[x, y])]
                                    for x, y in zip(i, j)))
    writer.json('quotient', report)
    constants = report.get('constants') or {}
    logger.success('\n' + tabulate([[Q.n_classes, report['axioms']['passed'], compare, constants.get('lower'),
                                     constants.get('upper')]],
                                   headers=['classes', 'axioms', 'compare', 'L-', 'L+']))


@cli.command('folner')
@experiment_options
@_exit_codes
def cmd_folner(config_file, seed, out_dir, model):
    cfg = _load(config_file, seed, out_dir, model)
    writer = cfg.writer()
    n, r = int(settings.folner_n), float(settings.folner_r)
    if n < 1 or r < 0:
        raise ConfigError(f'folner needs folner_n >= 1 and folner_r >= 0, got {n} and {r}')
    pad = int(math.ceil(r))
    if settings.folner_space == 'f2':
        if n > FREE_GROUP_MAX_N:
            logger.warning(f'folner: F2 balls grow like 3^n, capping n at {FREE_GROUP_MAX_N}')
            n = FREE_GROUP_MAX_N
        X, lengths, _ = coarse.free_group_window(2, n + pad)
    else:
        X, lengths = coarse.integer_lattice_window(2, n + pad)
    sets = [np.flatnonzero(lengths <= k) for k in range(1, n + 1)]
    profile = coarse.folner_profile(sets, r, X, labels=list(range(1, n + 1)))
    writer.csv('folner', ['n', 'size', 'boundary', 'ratio'],
               ([row['n'], row['size'], row['boundary'], row['ratio']] for row in profile.rows))
    writer.json('folner', {'space': str(settings.folner_space), 'r': r, 'verdict': profile.verdict,
                           'last_ratio': profile.ratios[-1]})
    logger.success('\n' + tabulate(profile.rows[-3:], headers='keys', floatfmt='.6f') + f'\nverdict: {profile.verdict}')


@cli.command('match')
@experiment_options
@_exit_codes
def cmd_match(config_file, seed, out_dir, model):
    cfg = _load(config_file, seed, out_dir, model)
    writer = cfg.writer()
    size, R = int(settings.match_size), float(settings.match_radius)
    offset = np.asarray(list(settings.match_offset), dtype=float)
    if offset.shape != (2,):
        raise ConfigError(f'match_offset must have two entries, got {offset.tolist()}')
    grid = np.array(list(itertools.product(range(size), repeat=2)), dtype=float)
    A = coarse.FiniteMetricSpace.from_coords(grid)
    B = coarse.FiniteMetricSpace.from_coords(grid + offset)
    result = coarse.bounded_displacement_matching(A, B, R)
    pairs = result.pairs()
    dist = np.linalg.norm(grid[pairs[:, 0]] - (grid + offset)[pairs[:, 1]], axis=1) if len(pairs) else []
    writer.csv('match', ['a', 'b', 'distance'], ([int(a), int(b), float(d)] for (a, b), d in zip(pairs, dist)))
    report = {'perfect': result.perfect, 'matched': int(len(pairs)), 'max_displacement': result.max_displacement,
              'radius': R,
              'witness': None if result.witness is None else result.witness.tolist(),
              'witness_neighbors': None if result.witness_neighbors is None else result.witness_neighbors.tolist()}
    writer.json('match', report)
    logger.success(f'perfect: {str(result.perfect).lower()}, maxDisp {result.max_displacement:.6g} <= {R:g}')


@cli.command('growth')
@experiment_options
@_exit_codes
def cmd_growth(config_file, seed, out_dir, model):
    cfg = _load(config_file, seed, out_dir, model)
    bundle = cfg.bundle()
    writer = cfg.writer()
    profile = carnot.growth_profile(bundle.lattice, list(settings.growth_radii))
    writer.csv('growth', ['r', 'ball', 'log_ratio'], ([row['r'], row['ball'], row['log_ratio']] for row in profile['rows']))
    writer.json('growth', {'lattice': bundle.lattice.description, **profile})
    logger.success('\n' + tabulate(profile['rows'], headers='keys') + f'\nslope: {profile["slope"]}')


def main():
    cli()


if __name__ == '__main__':
    main()
