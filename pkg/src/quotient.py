# Translation-like geometric quotients X/G on finite windows.
#
# Orbits are the connected components of the generator moves; the quotient distance is the
# shortest path on the class graph whose edge weights are the minimal cross-pair distances.

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import itertools
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, csgraph_from_dense, dijkstra
from loguru import logger
import coarse
from coarse import FiniteMetricSpace, PointedAction
from errors import ChainLinkageError, DegenerateInputError, DisconnectedQuotientError, NonBijectiveError


AXIOM_EXHAUSTIVE_CLASSES = 200
_TOL = 1e-9


@dataclass
class Partition:
    labels: np.ndarray  # class of each point, numbered by first appearance
    truncated: np.ndarray  # per class: touches the window boundary

    @property
    def n_classes(self) -> int:
        return len(self.truncated)

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)


def orbit_classes(window, action: PointedAction, boundary=None) -> Partition:
    """Closure of the points under all generator moves.

    A class is flagged truncated when it contains a `boundary` point; by default the
    boundary is where some move leaves the window.
    """
    size = len(window) if not isinstance(window, int) else window
    if action.size != size:
        raise DegenerateInputError(f'Action on {action.size} points used on a window of {size}')
    edges = action.edges()
    graph = csr_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(size, size))
    _, raw = connected_components(graph, directed=True, connection='weak')
    # relabel by first appearance
    _, first, inverse = np.unique(raw, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind='stable')] = np.arange(len(first))
    labels = rank[inverse]
    boundary = action.undefined_mask() if boundary is None else np.asarray(boundary, dtype=bool)
    truncated = np.zeros(len(first), dtype=bool)
    truncated[np.unique(labels[boundary])] = True
    return Partition(labels, truncated)


@dataclass
class QuotientWindow:
    base: FiniteMetricSpace
    action: PointedAction
    partition: Partition
    weights: np.ndarray  # (C, C) minimal cross-pair distances, 0 on the diagonal
    _distances: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_classes(self) -> int:
        return self.partition.n_classes

    @property
    def truncated(self) -> np.ndarray:
        return self.partition.truncated

    def class_of(self, x: int) -> int:
        return int(self.partition.labels[x])

    def members(self, c: int) -> np.ndarray:
        return self.partition.members(c)


def build_quotient(base: FiniteMetricSpace, action: PointedAction, boundary=None) -> QuotientWindow:
    partition = orbit_classes(base, action, boundary)
    labels, C = partition.labels, partition.n_classes
    D = base.matrix()
    order = np.argsort(labels, kind='stable')
    starts = np.searchsorted(labels[order], np.arange(C))
    W = np.empty((C, C))
    for c in range(C):
        nearest = D[partition.members(c)].min(axis=0)[order]
        W[c] = np.minimum.reduceat(nearest, starts)
    W = np.minimum(W, W.T)
    np.fill_diagonal(W, 0.0)
    logger.debug(f'build_quotient: {C} classes over {len(base)} points, {int(partition.truncated.sum())} truncated')
    return QuotientWindow(base, action, partition, W)


def trivial_quotient(base: FiniteMetricSpace) -> QuotientWindow:
    """Quotient by the trivial action: one class per point."""
    return build_quotient(base, PointedAction.trivial(len(base)), boundary=np.zeros(len(base), dtype=bool))


def class_distance_matrix(Q: QuotientWindow) -> np.ndarray:
    """All-pairs quotient distances; unreachable pairs are inf."""
    if Q._distances is None:
        graph = csgraph_from_dense(Q.weights, null_value=np.inf)
        Q._distances = dijkstra(graph, directed=False)
        np.fill_diagonal(Q._distances, 0.0)
    return Q._distances


def quotient_distance(Q: QuotientWindow, x: int, y: int) -> float:
    """d([x], [y]) over window-supported chains, inf when the class graph is disconnected."""
    return float(class_distance_matrix(Q)[Q.class_of(x), Q.class_of(y)])


def require_connected(Q: QuotientWindow) -> None:
    D = class_distance_matrix(Q)
    if not np.all(np.isfinite(D)):
        i, j = np.argwhere(~np.isfinite(D))[0]
        raise DisconnectedQuotientError(f'Classes {i} and {j} are not joined by any window chain')


# chains

@dataclass
class Chain:
    steps: List[Tuple[int, int]]  # (x_i, y_i)
    witnesses: List[str] = field(default_factory=list)  # word g_i with g_i . y_i = x_(i+1)

    def __post_init__(self):
        if not self.steps:
            raise DegenerateInputError('A chain needs at least one step')
        if len(self.witnesses) != len(self.steps) - 1:
            raise ChainLinkageError(f'{len(self.steps)} steps need {len(self.steps) - 1} witnesses')


def chain_cost(chain: Chain, base: FiniteMetricSpace, action: PointedAction = None) -> float:
    for i, word in enumerate(chain.witnesses):
        y, x_next = chain.steps[i][1], chain.steps[i + 1][0]
        if action is None:
            reached = y if not word else -1
        else:
            reached = int(action.apply_word(word, [y])[0])
        if reached != x_next:
            raise ChainLinkageError(f'Witness {word!r} sends {y} to {reached}, not to {x_next}')
    xs, ys = np.array(chain.steps, dtype=np.int64).T
    return float(base.dist_pairs(xs, ys).sum())


# checks

def metric_axiom_check(Q: QuotientWindow, tol: float = _TOL, seed: int = 0) -> dict:
    """Symmetry, positivity on distinct classes and the triangle inequality of d_(X/G)."""
    D = class_distance_matrix(Q)
    C = len(D)
    report = {'classes': C, 'exhaustive': C <= AXIOM_EXHAUSTIVE_CLASSES}
    if C < 2:
        report.update(symmetric=True, positive=True, triangle=True, min_distance=None,
                      max_asymmetry=0.0, max_triangle_violation=0.0, passed=True)
        return report
    finite = np.isfinite(D)
    asym = np.abs(D - D.T)[finite & finite.T]
    off = D[~np.eye(C, dtype=bool)]
    violation = 0.0
    if report['exhaustive']:
        for k in range(C):
            through = D[:, k, None] + D[None, k, :]
            ok = np.isfinite(through)
            if np.any(ok):
                violation = max(violation, float(np.max((D - through)[ok])))
    else:
        rng = np.random.default_rng(seed)
        i, j, k = rng.integers(0, C, (3, 20000))
        through = D[i, k] + D[k, j]
        ok = np.isfinite(through)
        violation = float(np.max((D[i, j] - through)[ok], initial=0.0))
    report.update(
        symmetric=bool(asym.max(initial=0.0) <= tol), max_asymmetry=float(asym.max(initial=0.0)),
        positive=bool(off.min() > 0), min_distance=float(off.min()),
        triangle=bool(violation <= tol), max_triangle_violation=violation,
    )
    report['passed'] = report['symmetric'] and report['positive'] and report['triangle']
    return report


@dataclass
class BilipReport:
    lower: float
    upper: float
    pairs: int
    excluded: List[int]

    def to_json(self) -> dict:
        return {'lower': self.lower, 'upper': self.upper, 'pairs': self.pairs, 'excluded': self.excluded}


def _retained(Q1: QuotientWindow, Q2: QuotientWindow, corr: np.ndarray) -> np.ndarray:
    keep = ~Q1.truncated & ~Q2.truncated[corr]
    if keep.sum() < 2:
        logger.warning('Fewer than two untruncated classes; estimating constants over all classes')
        keep = np.ones(Q1.n_classes, dtype=bool)
    return np.flatnonzero(keep)


def quotient_bilip_compare(Q1: QuotientWindow, Q2: QuotientWindow, correspondence) -> BilipReport:
    """(L-, L+) = (min, max) of d2 / d1 over class pairs, truncated classes excluded."""
    corr = np.asarray(correspondence, dtype=np.int64)
    if corr.shape != (Q1.n_classes,) or Q1.n_classes != Q2.n_classes or np.any(corr < 0) \
            or np.any(corr >= Q2.n_classes) or np.unique(corr).size != corr.size:
        raise NonBijectiveError('The class correspondence is not a bijection')
    keep = _retained(Q1, Q2, corr)
    D1, D2 = class_distance_matrix(Q1), class_distance_matrix(Q2)
    i, j = np.triu_indices(len(keep), k=1)
    d1, d2 = D1[keep[i], keep[j]], D2[corr[keep[i]], corr[keep[j]]]
    ok = (d1 > 0) & np.isfinite(d1) & np.isfinite(d2)
    if not np.any(ok):
        return BilipReport(1.0, 1.0, 0, np.flatnonzero(~np.isin(np.arange(Q1.n_classes), keep)).tolist())
    ratio = d2[ok] / d1[ok]
    excluded = np.setdiff1d(np.arange(Q1.n_classes), keep).tolist()
    return BilipReport(float(ratio.min()), float(ratio.max()), int(ok.sum()), excluded)


def class_correspondence(Q1: QuotientWindow, Q2: QuotientWindow, point_map=None) -> np.ndarray:
    """Class bijection induced by a point map from Q1's window to Q2's (identity by default)."""
    point_map = np.arange(len(Q1.base)) if point_map is None else np.asarray(point_map, dtype=np.int64)
    corr = np.full(Q1.n_classes, -1, dtype=np.int64)
    for c in range(Q1.n_classes):
        targets = np.unique(Q2.partition.labels[point_map[Q1.members(c)]])
        if targets.size != 1:
            raise NonBijectiveError(f'Class {c} is split over classes {targets.tolist()}')
        corr[c] = targets[0]
    return corr


def refinement_diagnostic(small: QuotientWindow, large: QuotientWindow, class_map) -> dict:
    """How quotient distances between retained classes change when the window grows."""
    class_map = np.asarray(class_map, dtype=np.int64)
    Ds, Dl = class_distance_matrix(small), class_distance_matrix(large)
    i, j = np.triu_indices(small.n_classes, k=1)
    ds, dl = Ds[i, j], Dl[class_map[i], class_map[j]]
    ok = np.isfinite(ds) & np.isfinite(dl)
    change = dl[ok] - ds[ok]
    increase = float(change.max(initial=0.0))
    return {'pairs': int(ok.sum()), 'max_increase': increase, 'max_decrease': float(-change.min(initial=0.0)),
            'monotone': increase <= _TOL}


def coarse_model_check(window, action: PointedAction, target_dim: int, base: FiniteMetricSpace = None) -> dict:
    """Coarse-model conditions for a net window quotient.

    (i) every orbit stays in one leaf, (ii) same-orbit ambient distances against ln d0,
    (iii) the class map [p] -> p.a is bi-Lipschitz onto its image.
    The base defaults to the upper window distance.
    """
    base = base if base is not None else window.metric_space('upper')
    Q = build_quotient(base, action, boundary=window.flat_boundary_mask())
    a = np.asarray(window.a)
    leaves = []
    for c in range(Q.n_classes):
        leaf = np.unique(a[Q.members(c)], axis=0)
        if len(leaf) != 1:
            raise DegenerateInputError(f'Orbit class {c} meets {len(leaf)} leaves; the action does not preserve a')
        leaves.append(leaf[0])
    leaves = np.array(leaves, dtype=float)
    report = {'classes': Q.n_classes, 'orbits_in_leaves': True}

    # (ii) same-orbit pairs in one leaf
    labels = Q.partition.labels
    i, j = np.triu_indices(len(base), k=1)
    same = labels[i] == labels[j]
    i, j = i[same], j[same]
    ratios = np.zeros(0)
    if i.size:
        d0 = window.d0_lower(i, j)
        ok = d0 > 1
        if np.any(ok):
            ratios = base.dist_pairs(i[ok], j[ok]) / np.log(d0[ok])
    report['orbit_log_ratio'] = None if ratios.size == 0 else [float(ratios.min()), float(ratios.max())]

    # (iii) class map onto the flat image
    image_rank = int(np.linalg.matrix_rank(leaves - leaves[0])) if len(leaves) > 1 else 0
    report['image_rank'] = image_rank
    report['dimension_match'] = image_rank == int(target_dim)
    if image_rank == 0:
        report['image'] = 'rank-0 image'
        report['constants'] = None
        return report
    flat = trivial_quotient(FiniteMetricSpace.from_coords(leaves))
    report['constants'] = quotient_bilip_compare(Q, flat, np.arange(Q.n_classes)).to_json()
    report['image'] = f'rank-{image_rank} image'
    return report


def coset_quotient_compare(k: int = 2, radius: int = 6, generator: Sequence[int] = (1, 0)) -> dict:
    """Z <= Z^k acting by translation on an l1 box: quotient against the coset space Z^k / Z."""
    h = np.asarray(generator, dtype=float)
    if h.shape != (k,) or not np.any(h):
        raise DegenerateInputError(f'Subgroup generator must be a nonzero vector of length {k}')
    pts = np.array(list(itertools.product(range(-radius, radius + 1), repeat=k)), dtype=float)
    X = FiniteMetricSpace.from_coords(pts, 'cityblock')
    lookup = {tuple(p.astype(int)): i for i, p in enumerate(pts)}
    moves = {}
    for name, step in (('h', h), ('H', -h)):
        moves[name] = np.array([lookup.get(tuple((p + step).astype(int)), -1) for p in pts], dtype=np.int64)
    action = PointedAction(len(pts), moves, {'h': 'H', 'H': 'h'})
    Q = build_quotient(X, action)
    reps = np.array([Q.members(c)[0] for c in range(Q.n_classes)])
    span = np.arange(-4 * radius, 4 * radius + 1)

    def coset_distance(x, y):
        shifts = (pts[y] - pts[x])[None, :] + span[:, None] * h[None, :]
        return float(np.abs(shifts).sum(axis=1).min())

    cosets = FiniteMetricSpace.from_callable(len(reps), lambda i, j: coset_distance(reps[i], reps[j]))
    report = quotient_bilip_compare(Q, trivial_quotient(cosets), np.arange(Q.n_classes))
    logger.info(f'coset_quotient_compare: {Q.n_classes} cosets, constants ({report.lower:.4g}, {report.upper:.4g})')
    return {'classes': Q.n_classes, 'constants': report.to_json()}
