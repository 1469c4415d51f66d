# Finite windows of the net X(Delta) = {(a, F_a(g))} and the translation-like Delta-action
#     g . (a, F_a(h)) = (a, F_a(h g^-1)).

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union
import itertools
import numpy as np
from scipy.stats import qmc
from loguru import logger
import settings
import carnot
import coarse
import quotient
import symspace
from carnot import Bounds, CarnotPoint, LatticeSpec
from symspace import HorocyclicPoint, WarpedMetric
from errors import DegenerateInputError, DimensionMismatchError, InfeasibleNetError


@dataclass(frozen=True, eq=False)
class NetPoint:
    a: np.ndarray  # integer leaf
    g: CarnotPoint
    embedded: HorocyclicPoint
    word: Optional[str] = None

    @classmethod
    def make(cls, a, g: CarnotPoint, metric: WarpedMetric, word: str = None) -> 'NetPoint':
        a = np.asarray(a, dtype=np.int64).reshape(-1)
        return cls(a, g, HorocyclicPoint(a, symspace.F_map(a, g, metric)), word)


def _normalize_box(a_box, rank: int) -> Tuple[Tuple[int, int], ...]:
    if np.isscalar(a_box):
        a_box = (int(a_box), int(a_box))
    a_box = [tuple(int(v) for v in b) if not np.isscalar(b) else b for b in a_box]
    if len(a_box) == 2 and all(np.isscalar(b) for b in a_box):
        a_box = [tuple(a_box)] * rank
    if len(a_box) != rank or any(len(b) != 2 or b[0] > b[1] for b in a_box):
        raise DimensionMismatchError(f'a_box must give {rank} integer intervals lo <= hi, got {a_box}')
    return tuple(a_box)


@dataclass
class NetWindow:
    spec: LatticeSpec
    metric: WarpedMetric
    a_box: Tuple[Tuple[int, int], ...]
    ball_radius: int
    ball: carnot.LatticeBall = field(repr=False)
    a: np.ndarray  # (M, rank) int
    g: np.ndarray  # (M, D) lattice coordinates
    n: np.ndarray  # (M, D) embedded leaf coordinates F_a(g)
    lengths: np.ndarray  # (M,) word lengths
    words: List[str] = field(repr=False)
    margin: Optional[Bounds] = None
    _index: dict = field(default_factory=dict, repr=False)
    _spaces: Dict[str, coarse.FiniteMetricSpace] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.words)

    @property
    def rank(self) -> int:
        return self.metric.rank

    @property
    def points(self) -> List[NetPoint]:
        return [self.point(i) for i in range(len(self))]

    def point(self, i: int) -> NetPoint:
        g = CarnotPoint(self.g[i], self.spec.algebra)
        return NetPoint(self.a[i], g, HorocyclicPoint(self.a[i], CarnotPoint(self.n[i], self.spec.algebra)),
                        self.words[i])

    def leaves(self) -> np.ndarray:
        return np.unique(self.a, axis=0)

    def index_of(self, a, g) -> np.ndarray:
        a = np.atleast_2d(np.asarray(a, dtype=np.int64))
        keys = carnot.coordinate_keys(np.atleast_2d(g))
        a = np.broadcast_to(a, (len(keys), a.shape[1]))
        return np.array([self._index.get((tuple(x), tuple(k)), -1) for x, k in zip(a.tolist(), keys.tolist())],
                        dtype=np.int64)

    def interior_mask(self) -> np.ndarray:
        """Points at word distance >= 1 from the ball boundary."""
        return self.lengths <= self.ball_radius - 1

    def flat_boundary_mask(self) -> np.ndarray:
        lo = np.array([b[0] for b in self.a_box])
        hi = np.array([b[1] for b in self.a_box])
        return np.any(((self.a == lo) | (self.a == hi)) & (hi > lo), axis=1)

    def d0_lower(self, I, J) -> np.ndarray:
        u = self.spec.algebra.multiply(-self.g[I], self.g[J])
        return carnot.d0_lower_bounds(u, self.metric.base_metric())

    def distance_lower(self, I, J) -> np.ndarray:
        """Ambient lower bounds for index pairs; exact for closed-form models."""
        return symspace.ambient_lower_bound(self.a[I], self.n[I], self.a[J], self.n[J], self.metric)

    def distance_upper(self, I, J) -> np.ndarray:
        """Lengths of vertical-then-leaf paths for index pairs; exact for closed-form models."""
        I, J = np.asarray(I, dtype=np.int64), np.asarray(J, dtype=np.int64)
        if self.metric.closed_form:
            return symspace.closed_form_distance(self.a[I], self.n[I], self.a[J], self.n[J], self.metric)
        upper = _path_upper(self, self.a[I], self.n[I], self.a[J], self.n[J])
        return np.maximum(upper, self.distance_lower(I, J))

    def metric_space(self, bound: str = 'lower') -> coarse.FiniteMetricSpace:
        """The window with the ambient 'lower' or 'upper' distance bound; both are exact for closed-form models.

        Separation and ball counts use 'lower'; quotient chains use 'upper', so chain costs
        bound the true window chain distances from above.
        """
        if bound not in ('lower', 'upper'):
            raise DegenerateInputError(f"bound must be 'lower' or 'upper', got {bound!r}")
        if self.metric.closed_form:
            bound = 'lower'
        if bound not in self._spaces:
            M = len(self)
            D = np.zeros((M, M))
            i, j = np.triu_indices(M, k=1)
            if i.size:
                pairs = self.distance_lower(i, j) if bound == 'lower' else self.distance_upper(i, j)
                D[i, j] = D[j, i] = pairs
            self._spaces[bound] = coarse.FiniteMetricSpace.from_matrix(D, labels=self.words)
        return self._spaces[bound]

    def to_json(self) -> dict:
        return {
            'lattice': self.spec.to_json(),
            'a_box': [list(b) for b in self.a_box],
            'ball_radius': self.ball_radius,
            'margin': None if self.margin is None else list(self.margin),
            'points': [{'a': a, 'word': w, 'g': g, 'n': n}
                       for a, w, g, n in zip(self.a.tolist(), self.words, self.g.tolist(), self.n.tolist())],
        }


def certified_separation(spec: LatticeSpec, metric: WarpedMetric) -> float:
    """Smallest exact same-leaf distance over lattice differences; closed-form models only."""
    ball = carnot.lattice_ball(spec, int(settings.carnot_margin_radius))
    u = ball.coords[1:]
    if not len(u):
        return float('inf')
    zeros = np.zeros((len(u), metric.rank))
    return float(symspace.closed_form_distance(zeros, np.zeros_like(u), zeros, u, metric).min())


def build_net(spec: LatticeSpec, metric: WarpedMetric, a_box, ball_radius: int) -> NetWindow:
    """All (a, F_a(g)) with a in a_box and |g| <= ball_radius.

    Needs a lattice d0 margin > 1; closed-form models also accept a smaller margin
    as long as the exact same-leaf separation is positive.
    """
    if spec.algebra is not metric.algebra and spec.algebra.dim != metric.algebra.dim:
        raise DimensionMismatchError('Lattice and metric live on different nilpotent groups')
    box = _normalize_box(a_box, metric.rank)
    margin = spec.margin or carnot.rescale_lattice(spec, 1.0, metric.base_metric()).margin
    if margin.lower <= 1:
        separation = certified_separation(spec, metric) if metric.closed_form else 0.0
        if separation <= 0:
            raise InfeasibleNetError(
                f'Lattice d0 margin {margin.lower:.6g} <= 1; call rescale_lattice(spec, s) with s > {1.0 / max(margin.lower, 1e-12):.4g}')
        logger.info(f'build_net: d0 margin {margin.lower:.6g} <= 1 accepted, exact same-leaf separation {separation:.6g}')
    ball = carnot.lattice_ball(spec, int(ball_radius))
    leaves = np.array(list(itertools.product(*[range(lo, hi + 1) for lo, hi in box])), dtype=np.int64)
    M = len(ball)
    a = np.repeat(leaves, M, axis=0)
    g = np.tile(ball.coords, (len(leaves), 1))
    n = metric.f_scale(a) * g
    words = list(ball.words) * len(leaves)
    lengths = np.tile(ball.lengths, len(leaves))
    keys = carnot.coordinate_keys(g)
    index = {(tuple(x), tuple(k)): i for i, (x, k) in enumerate(zip(a.tolist(), keys.tolist()))}
    window = NetWindow(spec, metric, box, int(ball_radius), ball, a, g, n, lengths, words, margin, index)
    logger.info(f'build_net: {len(leaves)} leaves x {M} lattice points = {len(window)} net points')
    return window


def _delta(spec: LatticeSpec, delta) -> np.ndarray:
    if isinstance(delta, str):
        return spec.element(delta).coords
    if isinstance(delta, CarnotPoint):
        return delta.coords
    coords = np.asarray(delta, dtype=float)
    if coords.shape != (spec.algebra.dim,):
        raise DimensionMismatchError(f'Lattice element must have {spec.algebra.dim} coordinates')
    return coords


def act(delta: CarnotPoint, p: NetPoint, metric: WarpedMetric) -> NetPoint:
    """delta . (a, F_a(h)) = (a, F_a(h delta^-1)); act(d1, act(d2, p)) = act(d1 d2, p)."""
    algebra = p.g.algebra
    h = algebra.multiply(p.g.coords, -delta.coords)
    return NetPoint.make(p.a, CarnotPoint(h, algebra), metric)


def _moved(window: NetWindow, delta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(g delta^-1, F_a(g delta^-1)) for every window point."""
    g = window.spec.algebra.multiply(window.g, -delta)
    return g, window.metric.f_scale(window.a) * g



@dataclass
class DisplacementProfile:
    word: str
    d0: Bounds
    sup: float
    sup_lower: float
    mean: float
    C: Optional[float]  # smallest C with sup <= C ln d0, None when d0 <= 1
    envelope: float
    within_envelope: bool
    leaf_rows: List[dict]
    rows: List[dict]
    boundary_excluded: int

    def to_json(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k not in ('rows',)}
        out['d0'] = list(self.d0)
        return out


def displacement_profile(delta, window: NetWindow, word: str = None) -> DisplacementProfile:
    """sup and mean of d(p, delta . p) over interior window points, with the per-leaf table.

    Displacement of a point only depends on its leaf, so non-closed-form models optimize one
    path per leaf.
    """
    metric, algebra = window.metric, window.spec.algebra
    coords = _delta(window.spec, delta)
    word = word if word is not None else (delta if isinstance(delta, str) else '')
    if np.all(np.abs(coords) <= settings.carnot_dedup_eps):
        raise DegenerateInputError('displacement_profile needs a nontrivial lattice element')
    origin = CarnotPoint(np.zeros(algebra.dim), algebra)
    d0 = carnot.distance_d0(origin, CarnotPoint(coords, algebra), metric.base_metric())
    keep = window.interior_mask()
    excluded = int(len(window) - keep.sum())
    if not np.any(keep):
        logger.warning('displacement_profile: no interior points, using the whole window')
        keep = np.ones(len(window), dtype=bool)
    idx = np.flatnonzero(keep)
    _, moved = _moved(window, coords)
    if metric.closed_form:
        low = up = symspace.closed_form_distance(window.a[idx], window.n[idx], window.a[idx], moved[idx], metric)
    else:
        leaves, inverse = np.unique(window.a[idx], axis=0, return_inverse=True)
        inverse = np.asarray(inverse).reshape(-1)
        leaf_bounds = []
        for leaf in leaves:
            step = CarnotPoint(metric.f_scale(leaf) * algebra.inverse(coords), algebra)
            b = symspace.distance_GK(HorocyclicPoint(leaf, CarnotPoint(np.zeros(algebra.dim), algebra)),
                                     HorocyclicPoint(leaf, step), metric)
            leaf_bounds.append(b)
        low = np.array([leaf_bounds[k].lower for k in inverse])
        up = np.array([leaf_bounds[k].upper for k in inverse])
    low, up = np.broadcast_to(low, idx.shape), np.broadcast_to(up, idx.shape)
    sup, sup_lower, mean = float(up.max()), float(low.max()), float(up.mean())
    leaf_rows = []
    for leaf in np.unique(window.a[idx], axis=0):
        on = np.all(window.a[idx] == leaf, axis=1)
        leaf_rows.append({'a': leaf.tolist(), 'sup': float(up[on].max()), 'min_lower': float(low[on].min()),
                          'mean': float(up[on].mean())})
    rows = [{'a': window.a[i].tolist(), 'word': window.words[i], 'lower': float(l), 'upper': float(u)}
            for i, l, u in zip(idx, low, up)]
    log_d0 = np.log(d0.lower) if d0.lower > 1 else None
    C = sup / log_d0 if log_d0 else None
    envelope = settings.wobble_slope * np.log(max(d0.lower, 1.0)) + settings.wobble_offset
    profile = DisplacementProfile(word, d0, sup, sup_lower, mean, C, float(envelope), sup <= envelope,
                                  leaf_rows, rows, excluded)
    if not profile.within_envelope:
        logger.warning(f'displacement_profile: sup {sup:.6g} exceeds {envelope:.6g} for {word!r}')
    return profile


def _fixed_points(window: NetWindow, elements: np.ndarray) -> int:
    count = 0
    for delta in elements:
        _, moved = _moved(window, delta)
        count += int(np.sum(np.max(np.abs(moved - window.n), axis=1) <= settings.carnot_dedup_eps))
    return count


def freeness_check(window: NetWindow, L: int = None) -> dict:
    """No nontrivial delta with |delta| <= L fixes a window point."""
    L = int(settings.freeness_word_length if L is None else L)
    if L < 1:
        raise DegenerateInputError(f'Word length must be >= 1, got {L}')
    ball = carnot.lattice_ball(window.spec, L)
    elements = ball.coords[1:]
    fixed = _fixed_points(window, elements)
    return {'word_length': L, 'elements': int(len(elements)), 'points': len(window), 'fixed_points': fixed,
            'free': fixed == 0}


def udbg_report(window: NetWindow, radii: Sequence[float] = None) -> dict:
    """Minimum separation and ambient ball counts, computed on the lower-bound distance.

    Lower bounds make the separation conservative and the counts upper estimates.
    """
    radii = list(settings.udbg_radii) if radii is None else list(radii)
    X = window.metric_space()
    report = coarse.udbg_profile(X, radii)
    D = X.matrix()
    if len(window) > 1:
        cross = np.any(window.a[:, None, :] != window.a[None, :, :], axis=2)
        same = ~cross & ~np.eye(len(window), dtype=bool)
        report['cross_leaf_separation'] = float(D[cross].min()) if np.any(cross) else None
        report['same_leaf_separation'] = float(D[same].min()) if np.any(same) else None
    else:
        report['min_separation'] = None
        report['cross_leaf_separation'] = report['same_leaf_separation'] = None
    report['margin'] = None if window.margin is None else list(window.margin)
    report['points'] = len(window)
    return report


# density

def probe_grid(window: NetWindow, count: int, seed: int = 0, leaf=None, n_box=(0.0, 1.0)) -> np.ndarray:
    """Scrambled Halton probes (a, n) on one leaf, by default density_leaf above the lowest trusted leaf."""
    rank, dim = window.rank, window.spec.algebra.dim
    if leaf is None:
        lo = np.array([b[0] + 1 for b in window.a_box], dtype=float)
        hi = np.array([b[1] - 1 for b in window.a_box], dtype=float)
        leaf = np.clip(lo + float(settings.density_leaf), lo, np.maximum(lo, hi))
    leaf = np.broadcast_to(np.asarray(leaf, dtype=float), (rank,))
    sample = qmc.Halton(d=dim, scramble=True, seed=seed).random(int(count))
    n = qmc.scale(sample, np.full(dim, n_box[0]), np.full(dim, n_box[1])) if n_box[1] > n_box[0] \
        else np.full((int(count), dim), float(n_box[0]))
    return np.hstack([np.tile(leaf, (int(count), 1)), n])


def _leaf_segment(window: NetWindow, a, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Length of the straight segment p -> q in exponential coordinates, measured in leaf a.

    The left-trivialized velocity is constant along the segment for step 2, so Simpson is exact there.
    """
    algebra = window.spec.algebra
    d = q - p
    leaf_w = window.metric.leaf_weights(a)
    nodes, weights = carnot.simpson_weights(int(settings.path_simpson_panels))
    total = np.zeros(d.shape[:-1])
    for t, wt in zip(nodes, weights):
        omega = algebra.left_trivialized_velocity(p + t * d, d)
        total += wt * np.sqrt(np.sum(leaf_w * omega * omega, axis=-1))
    return total


def _path_upper(window: NetWindow, pa, pn, qa, qn) -> np.ndarray:
    """|pa - qa| plus the shorter of the leaf segments pn -> qn in leaf pa or in leaf qa."""
    pa, qa = np.asarray(pa, dtype=float), np.asarray(qa, dtype=float)
    pn, qn = np.asarray(pn, dtype=float), np.asarray(qn, dtype=float)
    flat = np.linalg.norm(pa - qa, axis=-1)
    return flat + np.minimum(_leaf_segment(window, pa, pn, qn), _leaf_segment(window, qa, pn, qn))


def _chain_upper(window: NetWindow, pa: np.ndarray, pn: np.ndarray) -> np.ndarray:
    """|pa - b| plus the straight leaf segment from pn to each net point, measured in leaf b."""
    flat = np.linalg.norm(window.a - pa, axis=1)
    return flat + _leaf_segment(window, window.a, np.broadcast_to(pn, window.n.shape), window.n)


@dataclass
class DensityReport:
    epsilon: Optional[float]
    rows: List[dict]
    excluded: int

    def to_json(self) -> dict:
        return {'epsilon': self.epsilon, 'excluded': self.excluded, 'rows': self.rows}


def density_report(window: NetWindow, probes) -> DensityReport:
    """Empirical epsilon: max over trusted probes of the distance to the nearest net point.

    Probes must sit at least 1 inside the a-box and their nearest net point must be an
    interior ball point; other probes are flagged and excluded.
    """
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    rank = window.rank
    if probes.shape[1] != rank + window.spec.algebra.dim:
        raise DimensionMismatchError(f'Probes need {rank} flat and {window.spec.algebra.dim} leaf coordinates')
    lo = np.array([b[0] + 1 for b in window.a_box], dtype=float)
    hi = np.array([b[1] - 1 for b in window.a_box], dtype=float)
    interior = window.interior_mask()
    rows, eps, excluded = [], [], 0
    for k, probe in enumerate(probes):
        pa, pn = probe[:rank], probe[rank:]
        trusted = bool(np.all(pa >= lo - 1e-12) and np.all(pa <= hi + 1e-12))
        if window.metric.closed_form:
            M = len(window)
            d = symspace.closed_form_distance(np.tile(pa, (M, 1)), np.tile(pn, (M, 1)), window.a, window.n,
                                              window.metric)
        else:
            d = _chain_upper(window, pa, pn)
        nearest = int(np.argmin(d))
        trusted = trusted and bool(interior[nearest])
        rows.append({'probe': k, 'a': pa.tolist(), 'n': pn.tolist(), 'nearest': window.words[nearest],
                     'nearest_a': window.a[nearest].tolist(), 'distance': float(d[nearest]), 'trusted': trusted})
        if trusted:
            eps.append(float(d[nearest]))
        else:
            excluded += 1
    if excluded:
        logger.warning(f'density_report: {excluded} probes outside the trusted interior were excluded')
    return DensityReport(max(eps) if eps else None, rows, excluded)


# actions on the window

def window_action(window: NetWindow, elements: Dict[str, np.ndarray] = None,
                  inverse: Dict[str, str] = None) -> coarse.PointedAction:
    """Right translations p . s = act(s^-1, p) as a partial action on the window.

    Defaults to the symmetric generators of the lattice.
    """
    if elements is None:
        names, gens = window.spec.symmetric_generators()
        elements = dict(zip(names, gens))
        inverse = {s: s.swapcase() for s in names}
    moves = {}
    for s, coords in elements.items():
        g, _ = _moved(window, -np.asarray(coords, dtype=float))
        moves[s] = window.index_of(window.a, g)
    return coarse.PointedAction(len(window), moves, inverse or {})


def orbit_check(window: NetWindow) -> dict:
    """Same orbit iff same leaf and word-difference length <= 2 * ball_radius, exhaustively."""
    partition = quotient.orbit_classes(len(window), window_action(window),
                                       boundary=np.zeros(len(window), dtype=bool))
    big = carnot.lattice_ball(window.spec, 2 * window.ball_radius)
    i, j = np.triu_indices(len(window), k=1)
    same_leaf = np.all(window.a[i] == window.a[j], axis=1)
    diff = window.spec.algebra.multiply(-window.g[i], window.g[j])
    close = np.zeros(len(i), dtype=bool)
    close[same_leaf] = big.index_of(diff[same_leaf]) >= 0
    predicted = same_leaf & close
    observed = partition.labels[i] == partition.labels[j]
    mismatches = int(np.sum(predicted != observed))
    return {'pairs': int(len(i)), 'classes': partition.n_classes, 'mismatches': mismatches, 'ok': mismatches == 0}


def _inverse_word(word: str) -> str:
    return word[::-1].swapcase()


def subgroup_action(window: NetWindow, words: Sequence[str], L: int = None) -> dict:
    """Action of the subgroup generated by `words` (e.g. 'a' and the commutator 'abAB').

    Reports commutation of the generators, freeness up to word length L in the subgroup
    and the displacement of each generator.
    """
    algebra = window.spec.algebra
    L = int(settings.freeness_word_length if L is None else L)
    gens = np.array([window.spec.element(w).coords for w in words])
    names = tuple('xyzuvw'[:len(words)])
    sub = LatticeSpec(algebra, gens, f'subgroup <{", ".join(words)}>', names)
    commute = all(np.allclose(algebra.multiply(x, y), algebra.multiply(y, x), atol=1e-12)
                  for x, y in itertools.combinations(gens, 2))
    ball = carnot.lattice_ball(sub, L)
    fixed = _fixed_points(window, ball.coords[1:])
    elements = {w: g for w, g in zip(words, gens)}
    elements.update({_inverse_word(w): -g for w, g in zip(words, gens)})
    action = window_action(window, elements, {w: _inverse_word(w) for w in elements})
    displacement = {w: displacement_profile(g, window, word=w).sup for w, g in zip(words, gens)}
    return {'words': list(words), 'abelian': commute, 'word_length': L, 'elements': int(len(ball) - 1),
            'fixed_points': fixed, 'free': fixed == 0, 'displacement': displacement, 'action': action}
