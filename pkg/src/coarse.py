# Coarse geometry on finite metric windows: r-boundaries, Folner profiles,
# transport and composition of translation-like actions, bounded-displacement matchings.

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import itertools
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra, shortest_path
from scipy.spatial import cKDTree
from loguru import logger
import settings
import carnot
from errors import (NonMetricError, NonBijectiveError, OrbitChartError, SizeMismatchError,
                    DegenerateInputError, DimensionMismatchError)


EXHAUSTIVE_LIMIT = 500
DENSE_LIMIT = 3000
_TOL = 1e-9


class FiniteMetricSpace:
    """Finite window (X, d) with points indexed 0..n-1.

    Backed by coordinates (euclidean / cityblock, queried through a cKDTree), a dense matrix,
    an unweighted graph (shortest paths) or a callable d(i, j).
    """

    def __init__(self, size: int, coords: np.ndarray = None, metric: str = 'euclidean',
                 matrix: np.ndarray = None, graph: csr_matrix = None, func: Callable = None,
                 labels: Sequence = None, validate: bool = True):
        self.size = int(size)
        self.coords = None if coords is None else np.asarray(coords, dtype=float).reshape(self.size, -1)
        if metric not in ('euclidean', 'cityblock'):
            raise DegenerateInputError(f'Unsupported coordinate metric {metric!r}')
        self.metric = metric
        self._p = 2 if metric == 'euclidean' else 1
        self._matrix = None if matrix is None else np.asarray(matrix, dtype=float)
        self.graph = graph
        self.func = func
        self.labels = list(labels) if labels is not None else None
        self._tree = cKDTree(self.coords) if self.coords is not None else None
        if self.graph is not None and self._matrix is None and self.size <= EXHAUSTIVE_LIMIT:
            self._matrix = shortest_path(self.graph, method='D', directed=False, unweighted=True)
        if validate:
            self._validate()

    @classmethod
    def from_coords(cls, coords, metric: str = 'euclidean', **kwargs) -> 'FiniteMetricSpace':
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        return cls(len(coords), coords=coords, metric=metric, **kwargs)

    @classmethod
    def from_matrix(cls, matrix, **kwargs) -> 'FiniteMetricSpace':
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionMismatchError(f'Distance matrix must be square, got {matrix.shape}')
        return cls(len(matrix), matrix=matrix, **kwargs)

    @classmethod
    def from_graph(cls, size: int, edges: Sequence[Tuple[int, int]], **kwargs) -> 'FiniteMetricSpace':
        """Path metric of an unweighted undirected graph; disconnected pairs are at distance inf."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        data = np.ones(len(edges))
        graph = csr_matrix((data, (edges[:, 0], edges[:, 1])), shape=(size, size))
        graph = graph.maximum(graph.T).tocsr()
        return cls(size, graph=graph, **kwargs)

    @classmethod
    def from_callable(cls, size: int, func: Callable[[int, int], float], **kwargs) -> 'FiniteMetricSpace':
        return cls(size, func=func, **kwargs)

    def __len__(self) -> int:
        return self.size

    # distances

    def dist(self, i: int, j: int) -> float:
        return float(self.dist_pairs(np.array([i]), np.array([j]))[0])

    def dist_pairs(self, I, J) -> np.ndarray:
        I, J = np.asarray(I, dtype=np.int64), np.asarray(J, dtype=np.int64)
        if self._matrix is not None:
            return self._matrix[I, J]
        if self.coords is not None:
            diff = self.coords[I] - self.coords[J]
            return np.linalg.norm(diff, ord=self._p, axis=-1)
        if self.graph is not None:
            out = np.empty(len(I))
            for src in np.unique(I):
                row = dijkstra(self.graph, directed=False, unweighted=True, indices=int(src))
                out[I == src] = row[J[I == src]]
            return out
        return np.array([self.func(int(i), int(j)) for i, j in zip(I, J)], dtype=float)

    def distances_from(self, i: int) -> np.ndarray:
        if self._matrix is not None:
            return self._matrix[i]
        if self.graph is not None:
            return dijkstra(self.graph, directed=False, unweighted=True, indices=int(i))
        return self.dist_pairs(np.full(self.size, i), np.arange(self.size))

    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            if self.size > DENSE_LIMIT:
                raise DegenerateInputError(f'Refusing to build a dense {self.size}x{self.size} distance matrix')
            if self.coords is not None:
                diff = self.coords[:, None, :] - self.coords[None, :, :]
                self._matrix = np.linalg.norm(diff, ord=self._p, axis=-1)
            elif self.graph is not None:
                self._matrix = shortest_path(self.graph, method='D', directed=False, unweighted=True)
            else:
                self._matrix = np.array([[self.func(i, j) for j in range(self.size)] for i in range(self.size)])
        return self._matrix

    def within(self, F, r: float) -> np.ndarray:
        """Boolean mask of the points at distance <= r from some point of F."""
        F = np.asarray(F, dtype=np.int64)
        mask = np.zeros(self.size, dtype=bool)
        if F.size == 0:
            return mask
        if self.coords is not None and self._matrix is None:
            for hits in self._tree.query_ball_point(self.coords[F], r + _TOL, p=self._p):
                mask[hits] = True
        elif self.graph is not None and self._matrix is None:
            mask = dijkstra(self.graph, directed=False, unweighted=True, indices=F,
                            limit=r + _TOL, min_only=True) <= r + _TOL
        else:
            for i in F:
                mask |= self.distances_from(int(i)) <= r + _TOL
        return mask

    def ball(self, i: int, r: float) -> np.ndarray:
        return np.flatnonzero(self.within([i], r))

    def pairs(self, limit: int = EXHAUSTIVE_LIMIT, samples: int = 20000, seed: int = 0):
        """All index pairs i < j when the window is small, a seeded sample otherwise."""
        if self.size <= limit:
            return np.triu_indices(self.size, k=1)
        rng = np.random.default_rng(seed)
        I = rng.integers(0, self.size, samples)
        J = rng.integers(0, self.size, samples)
        keep = I != J
        return I[keep], J[keep]

    def _validate(self) -> None:
        if self._matrix is not None and self.size <= EXHAUSTIVE_LIMIT:
            M = self._matrix
            if M.shape != (self.size, self.size):
                raise DimensionMismatchError(f'Distance matrix must be {self.size}x{self.size}')
            if np.any(np.isnan(M)) or np.any(M < 0):
                raise NonMetricError('Distances must be nonnegative')
            if np.any(np.abs(np.diag(M)) > _TOL):
                raise NonMetricError('d(x, x) must be 0')
            finite = np.isfinite(M) & np.isfinite(M.T)
            if np.any(np.abs(M - M.T)[finite] > _TOL * max(1.0, np.abs(M[finite]).max(initial=0.0))) \
                    or np.any(np.isfinite(M) != np.isfinite(M.T)):
                raise NonMetricError('Distance is not symmetric')
            return
        if self.graph is not None:
            # path metrics of undirected graphs are metrics by construction
            return
        rng = np.random.default_rng(0)
        count = min(2000, self.size)
        I = rng.integers(0, self.size, count)
        J = rng.integers(0, self.size, count)
        d_ij, d_ji = self.dist_pairs(I, J), self.dist_pairs(J, I)
        if np.any(d_ij < 0) or np.any(np.isnan(d_ij)):
            raise NonMetricError('Distances must be nonnegative')
        if np.any(np.abs(self.dist_pairs(I, I)) > _TOL):
            raise NonMetricError('d(x, x) must be 0')
        finite = np.isfinite(d_ij)
        if np.any(np.abs(d_ij - d_ji)[finite] > _TOL * max(1.0, np.abs(d_ij[finite]).max(initial=0.0))):
            raise NonMetricError('Distance is not symmetric')


# Cayley windows

def integer_lattice_window(k: int, radius: int, metric: str = 'cityblock') -> Tuple[FiniteMetricSpace, np.ndarray]:
    """Z^k points of l1 norm <= radius and their word lengths."""
    rng = np.arange(-radius, radius + 1)
    pts = np.array(list(itertools.product(rng, repeat=k)), dtype=float).reshape(-1, k)
    lengths = np.abs(pts).sum(axis=1).astype(np.int64)
    keep = lengths <= radius
    order = np.lexsort((*pts[keep].T[::-1], lengths[keep]))
    pts, lengths = pts[keep][order], lengths[keep][order]
    return FiniteMetricSpace.from_coords(pts, metric), lengths


def free_group_window(rank: int, radius: int) -> Tuple[FiniteMetricSpace, np.ndarray, List[str]]:
    """Ball of the free group F_rank in its Cayley tree, with word lengths and reduced words."""
    letters = [chr(ord('a') + i) for i in range(rank)]
    letters += [c.upper() for c in letters]
    words, lengths, edges = [''], [0], []
    frontier = [0]
    for length in range(1, radius + 1):
        nxt = []
        for idx in frontier:
            w = words[idx]
            for c in letters:
                if w and w[-1] == c.swapcase():
                    continue
                words.append(w + c)
                lengths.append(length)
                edges.append((idx, len(words) - 1))
                nxt.append(len(words) - 1)
        frontier = nxt
    X = FiniteMetricSpace.from_graph(len(words), edges, labels=words)
    return X, np.array(lengths, dtype=np.int64), words


# boundaries and Folner profiles

def r_boundary(F, r: float, X: FiniteMetricSpace) -> np.ndarray:
    """Indices of X \\ F within distance r of F."""
    F = np.asarray(F, dtype=np.int64)
    mask = X.within(F, r)
    mask[F] = False
    return np.flatnonzero(mask)


@dataclass
class FolnerProfile:
    rows: List[dict]
    verdict: str

    @property
    def ratios(self) -> List[float]:
        return [row['ratio'] for row in self.rows]


def folner_profile(sets: Sequence, r: float, X: FiniteMetricSpace, labels: Sequence = None) -> FolnerProfile:
    """Ratios |boundary_r F_k| / |F_k| over a nested sequence, with a heuristic verdict.

    'amenable-consistent' when the ratios decrease strictly and end below 0.1,
    'nonamenable-consistent' when the last half stays >= 0.5; these are labels, not theorems.
    """
    rows, previous = [], None
    for k, F in enumerate(sets):
        F = np.unique(np.asarray(F, dtype=np.int64))
        if F.size == 0:
            raise DegenerateInputError(f'Set {k} of the Folner sequence is empty')
        if previous is not None and not np.all(np.isin(previous, F)):
            raise DegenerateInputError(f'Set {k} does not contain set {k - 1}')
        boundary = r_boundary(F, r, X)
        rows.append({'n': labels[k] if labels is not None else k + 1, 'size': int(F.size),
                     'boundary': int(boundary.size), 'ratio': boundary.size / F.size})
        previous = F
    ratios = np.array([row['ratio'] for row in rows])
    half = ratios[len(ratios) // 2:]
    if len(ratios) >= 2 and np.all(np.diff(ratios) < 0) and ratios[-1] < 0.1:
        verdict = 'amenable-consistent'
    elif half.size and half.min() >= 0.5:
        verdict = 'nonamenable-consistent'
    else:
        verdict = 'inconclusive'
    logger.debug(f'folner_profile: last ratio {ratios[-1]:.6f}, verdict {verdict}')
    return FolnerProfile(rows, verdict)


# actions

@dataclass
class PointedAction:
    """Partial action of a finitely generated group on a window.

    moves[s][i] is the index reached from point i by generator s, -1 when it leaves the window.
    """
    size: int
    moves: Dict[str, np.ndarray]
    inverse: Dict[str, str]

    def __post_init__(self):
        self.moves = {s: np.asarray(m, dtype=np.int64) for s, m in self.moves.items()}
        for s, m in self.moves.items():
            if m.shape != (self.size,):
                raise DimensionMismatchError(f'Move table of {s!r} must have length {self.size}')
            defined = m[m >= 0]
            if np.unique(defined).size != defined.size:
                raise NonBijectiveError(f'Generator {s!r} is not injective on the window')
        for s, t in self.inverse.items():
            m, back = self.moves[s], self.moves[t]
            i = np.flatnonzero(m >= 0)
            j = back[m[i]]
            ok = j < 0
            if np.any(j[~ok] != i[~ok]):
                raise NonBijectiveError(f'{t!r} does not undo {s!r} on the window')

    @property
    def generators(self) -> List[str]:
        return list(self.moves)

    @classmethod
    def trivial(cls, size: int) -> 'PointedAction':
        return cls(size, {'e': np.arange(size)}, {'e': 'e'})

    def apply_word(self, word, points) -> np.ndarray:
        """Apply the letters of `word` left to right; -1 once a move leaves the window."""
        out = np.array(points, dtype=np.int64, copy=True)
        for s in word:
            ok = out >= 0
            out[ok] = self.moves[s][out[ok]]
        return out

    def edges(self) -> np.ndarray:
        rows = []
        for m in self.moves.values():
            i = np.flatnonzero(m >= 0)
            rows.append(np.stack([i, m[i]], axis=1))
        return np.vstack(rows) if rows else np.zeros((0, 2), dtype=np.int64)

    def undefined_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        for m in self.moves.values():
            mask |= m < 0
        return mask

    def fixed_points(self, s: str) -> np.ndarray:
        return np.flatnonzero(self.moves[s] == np.arange(self.size))

    def displacement(self, s: str, X: FiniteMetricSpace) -> np.ndarray:
        """d(x, s.x) over the points where s is defined."""
        m = self.moves[s]
        i = np.flatnonzero(m >= 0)
        return X.dist_pairs(i, m[i])

    def max_displacement(self, X: FiniteMetricSpace) -> Dict[str, float]:
        return {s: float(self.displacement(s, X).max(initial=0.0)) for s in self.moves}


def lipschitz_constants(F, X: FiniteMetricSpace, Y: FiniteMetricSpace) -> Tuple[float, float]:
    """(min, max) of d_Y(F x, F y) / d_X(x, y) over window pairs."""
    F = np.asarray(F, dtype=np.int64)
    I, J = X.pairs()
    dx, dy = X.dist_pairs(I, J), Y.dist_pairs(F[I], F[J])
    keep = (dx > 0) & np.isfinite(dx) & np.isfinite(dy)
    if not np.any(keep):
        return 1.0, 1.0
    ratio = dy[keep] / dx[keep]
    return float(ratio.min()), float(ratio.max())


def _check_bijection(F, n_from: int, n_to: int) -> np.ndarray:
    F = np.asarray(F, dtype=np.int64)
    if n_from != n_to or F.shape != (n_from,) or np.any(F < 0) or np.any(F >= n_to) \
            or np.unique(F).size != n_from:
        raise NonBijectiveError('The map is not a bijection between the windows')
    return F


@dataclass
class TransportReport:
    lipschitz: Tuple[float, float]
    displacement_x: Dict[str, float]
    displacement_y: Dict[str, float]
    bounded: bool


def transport_action(F, action: PointedAction, X: FiniteMetricSpace, Y: FiniteMetricSpace,
                     lipschitz: Tuple[float, float] = None) -> Tuple[PointedAction, TransportReport]:
    """Conjugate an action on X along the bijection F: X -> Y, g.y = F(g.F^-1(y))."""
    F = _check_bijection(F, len(X), len(Y))
    moves = {}
    for s, m in action.moves.items():
        out = np.full(len(Y), -1, dtype=np.int64)
        ok = m >= 0
        out[F[ok]] = F[m[ok]]
        moves[s] = out
    transported = PointedAction(len(Y), moves, dict(action.inverse))
    lip = lipschitz or lipschitz_constants(F, X, Y)
    disp_x, disp_y = action.max_displacement(X), transported.max_displacement(Y)
    bounded = all(disp_y[s] <= lip[1] * disp_x[s] + _TOL for s in disp_x)
    if not bounded:
        logger.warning(f'Transported displacement exceeds Lip(F) times the original: {disp_y} vs {disp_x}')
    return transported, TransportReport(lip, disp_x, disp_y, bounded)


# groups and orbit charts

class IntegerLattice:
    """Z^k with integer vectors."""

    def __init__(self, k: int):
        self.k = k

    def identity(self) -> np.ndarray:
        return np.zeros(self.k)

    def multiply(self, x, y) -> np.ndarray:
        return np.asarray(x, dtype=float) + np.asarray(y, dtype=float)

    def inverse(self, x) -> np.ndarray:
        return -np.asarray(x, dtype=float)

    def key(self, x) -> tuple:
        return tuple(np.round(np.asarray(x, dtype=float)).astype(np.int64).tolist())


class CarnotLatticeGroup:
    """Lattice in a Carnot group, BCH product in exponential coordinates."""

    def __init__(self, algebra):
        self.algebra = algebra

    def identity(self) -> np.ndarray:
        return np.zeros(self.algebra.dim)

    def multiply(self, x, y) -> np.ndarray:
        return self.algebra.multiply(x, y)

    def inverse(self, x) -> np.ndarray:
        return -np.asarray(x, dtype=float)

    def key(self, x) -> tuple:
        return tuple(carnot.coordinate_keys(x).tolist())


@dataclass
class OrbitChart:
    """Every window point written as rep . g for the right action of `action`."""
    reps: np.ndarray  # representative point index of each point
    elements: np.ndarray  # group element of each point
    lookup: Dict[tuple, int] = field(repr=False)
    group: object = field(repr=False)

    @classmethod
    def build(cls, action: PointedAction, group, generator_elements: Dict[str, np.ndarray], reps) -> 'OrbitChart':
        n = action.size
        rep_of = np.full(n, -1, dtype=np.int64)
        elems = np.zeros((n, len(group.identity())))
        lookup = {}
        for r in reps:
            r = int(r)
            if rep_of[r] >= 0:
                raise OrbitChartError(f'Representative {r} lies in the orbit of representative {rep_of[r]}')
            rep_of[r] = r
            elems[r] = group.identity()
            lookup[(r, group.key(elems[r]))] = r
            queue = deque([r])
            while queue:
                i = queue.popleft()
                for s, m in action.moves.items():
                    j = int(m[i])
                    if j < 0:
                        continue
                    g = group.multiply(elems[i], generator_elements[s])
                    if rep_of[j] < 0:
                        rep_of[j], elems[j] = r, g
                        lookup[(r, group.key(g))] = j
                        queue.append(j)
                    elif rep_of[j] != r or group.key(elems[j]) != group.key(g):
                        raise OrbitChartError(f'Point {j} has two decompositions rep.g on the window')
        if np.any(rep_of < 0):
            raise OrbitChartError(f'{int(np.sum(rep_of < 0))} points are not reached from the representatives')
        return cls(rep_of, elems, lookup, group)

    def index(self, rep: int, element) -> int:
        return self.lookup.get((int(rep), self.group.key(element)), -1)


def induce_action_from_group_equivalence(F: Callable, F_inv: Callable, h_generators: Dict[str, np.ndarray],
                                         h_group, chart: OrbitChart,
                                         h_inverse: Dict[str, str] = None) -> PointedAction:
    """H-action on X from a bijection F: H -> G and a free G-action: h.(x.g) = x.F(F^-1(g) h)."""
    n = len(chart.reps)
    moves = {}
    for s, h in h_generators.items():
        out = np.full(n, -1, dtype=np.int64)
        for i in range(n):
            g = F(h_group.multiply(F_inv(chart.elements[i]), h))
            out[i] = chart.index(chart.reps[i], g)
        moves[s] = out
    if h_inverse is None:
        h_inverse = {}
        keys = {s: h_group.key(h) for s, h in h_generators.items()}
        for s, h in h_generators.items():
            inv = h_group.key(h_group.inverse(h))
            h_inverse.update({s: t for t, k in keys.items() if k == inv})
    return PointedAction(n, moves, h_inverse)


def compose_translation_like(h_action: PointedAction, g_window_lookup: Callable, chart: OrbitChart,
                             g_elements: np.ndarray) -> Tuple[PointedAction, bool]:
    """H acting on a G-window composed with G acting on X: h.(x.g) = x.(h.g).

    `g_elements[j]` is the group element at index j of the G-window and
    `g_window_lookup(element)` returns its index (-1 when absent). Returns the composite
    and whether some move left a window (partial).
    """
    n = len(chart.reps)
    g_index = np.array([g_window_lookup(e) for e in chart.elements], dtype=np.int64)
    moves, partial = {}, False
    for s, m in h_action.moves.items():
        out = np.full(n, -1, dtype=np.int64)
        ok = g_index >= 0
        target = np.full(n, -1, dtype=np.int64)
        target[ok] = m[g_index[ok]]
        for i in np.flatnonzero(target >= 0):
            out[i] = chart.index(chart.reps[i], g_elements[target[i]])
        partial |= bool(np.any(out < 0))
        moves[s] = out
    if partial:
        logger.info('compose_translation_like: some composite moves leave the window (partial action)')
    return PointedAction(n, moves, dict(h_action.inverse)), partial


# metric summaries

def udbg_profile(X: FiniteMetricSpace, radii: Sequence[float]) -> dict:
    """Minimum separation and the largest ball cardinality for each radius, with the log-slope."""
    if len(X) < 2:
        separation = float('inf')
    elif X.coords is not None and X._matrix is None:
        d, _ = X._tree.query(X.coords, k=2, p=X._p)
        separation = float(d[:, 1].min())
    else:
        M = X.matrix()
        separation = float(np.min(M + np.diag(np.full(len(X), np.inf))))
    counts = []
    for r in radii:
        counts.append(max(int(X.within([i], r).sum()) for i in range(len(X))))
    slope = None
    if len(radii) >= 2:
        slope = float(np.polyfit(np.asarray(radii, dtype=float), np.log(counts), 1)[0])
    return {'min_separation': separation, 'radii': list(map(float, radii)), 'ball_counts': counts,
            'log_slope': slope}


def quasi_isometry_fit(f, X: FiniteMetricSpace, Y: FiniteMetricSpace, A: float = None) -> dict:
    """Constants of d_X / A - B <= d_Y(f x, f y) <= A d_X + B and the density of f(X) in Y."""
    f = np.asarray(f, dtype=np.int64)
    I, J = X.pairs()
    dx, dy = X.dist_pairs(I, J), Y.dist_pairs(f[I], f[J])
    keep = (dx > 0) & np.isfinite(dy)
    ratio = dy[keep] / dx[keep]
    bilip = float(max(ratio.max(), 1.0 / ratio.min())) if ratio.size and ratio.min() > 0 else float('inf')
    A = bilip if A is None else float(A)
    B = 0.0
    if np.isfinite(A) and dx.size:
        B = float(max(0.0, np.max(dy - A * dx), np.max(dx / A - dy)))
    image = np.unique(f)
    covering = 0.0
    if len(Y) > len(image):
        covering = float(max(Y.distances_from(int(y))[image].min() for y in range(len(Y))))
    return {'A': A, 'B': B, 'bilipschitz': bilip, 'density': covering}


# matchings

@dataclass
class MatchingResult:
    perfect: bool
    match: np.ndarray  # match[a] = b or -1
    max_displacement: float
    witness: Optional[np.ndarray] = None  # Hall violator S in A
    witness_neighbors: Optional[np.ndarray] = None  # N(S) in B, |N(S)| < |S|

    def pairs(self) -> np.ndarray:
        a = np.flatnonzero(self.match >= 0)
        return np.stack([a, self.match[a]], axis=1)


def _hopcroft_karp(adj: List[List[int]], n_a: int, n_b: int, match_a: List[int], match_b: List[int]) -> None:
    inf = n_a + 1
    while True:
        dist = [inf] * n_a
        queue = deque()
        for a in range(n_a):
            if match_a[a] == -1:
                dist[a] = 0
                queue.append(a)
        found = False
        while queue:
            a = queue.popleft()
            for b in adj[a]:
                a2 = match_b[b]
                if a2 == -1:
                    found = True
                elif dist[a2] == inf:
                    dist[a2] = dist[a] + 1
                    queue.append(a2)
        if not found:
            return
        ptr = [0] * n_a
        for root in range(n_a):
            if match_a[root] != -1:
                continue
            stack, path = [root], []
            while stack:
                a = stack[-1]
                if ptr[a] < len(adj[a]):
                    b = adj[a][ptr[a]]
                    ptr[a] += 1
                    a2 = match_b[b]
                    if a2 == -1:
                        path.append(b)
                        for a_, b_ in zip(stack, path):
                            match_a[a_], match_b[b_] = b_, a_
                        break
                    if dist[a2] == dist[a] + 1:
                        path.append(b)
                        stack.append(a2)
                else:
                    dist[a] = inf
                    stack.pop()
                    if path:
                        path.pop()


def bounded_displacement_matching(A: FiniteMetricSpace, B: FiniteMetricSpace, R: float) -> MatchingResult:
    """Maximum matching on {(a, b): d(a, b) <= R}; perfect matching or a Hall-violating set.

    Edges are tried nearest first, ties broken by index, after a greedy nearest-first start.
    """
    if len(A) != len(B):
        raise SizeMismatchError(f'Windows have different sizes {len(A)} and {len(B)}')
    if A.coords is None or B.coords is None or A.coords.shape[1] != B.coords.shape[1] or A.metric != B.metric:
        raise DimensionMismatchError('Matching needs both windows embedded in the same coordinate space')
    n = len(A)
    hits = B._tree.query_ball_point(A.coords, R + _TOL, p=A._p)
    adj = []
    for a, bs in enumerate(hits):
        bs = np.asarray(bs, dtype=np.int64)
        d = np.linalg.norm(B.coords[bs] - A.coords[a], ord=A._p, axis=-1) if bs.size else np.zeros(0)
        adj.append(bs[np.lexsort((bs, d))].tolist())
    match_a, match_b = [-1] * n, [-1] * n
    for a in range(n):
        for b in adj[a]:
            if match_b[b] == -1:
                match_a[a], match_b[b] = b, a
                break
    _hopcroft_karp(adj, n, n, match_a, match_b)
    match = np.array(match_a, dtype=np.int64)
    matched = np.flatnonzero(match >= 0)
    disp = np.linalg.norm(A.coords[matched] - B.coords[match[matched]], ord=A._p, axis=-1)
    result = MatchingResult(bool(matched.size == n), match, float(disp.max(initial=0.0)))
    if not result.perfect:
        # alternating search from one free vertex of A
        root = int(np.flatnonzero(match < 0)[0])
        seen_a, seen_b = {root}, set()
        queue = deque([root])
        while queue:
            a = queue.popleft()
            for b in adj[a]:
                if b in seen_b:
                    continue
                seen_b.add(b)
                partner = match_b[b]
                if partner != -1 and partner not in seen_a:
                    seen_a.add(partner)
                    queue.append(partner)
        result.witness = np.array(sorted(seen_a), dtype=np.int64)
        result.witness_neighbors = np.array(sorted(seen_b), dtype=np.int64)
    logger.debug(f'bounded_displacement_matching: {matched.size}/{n} matched, max displacement {result.max_displacement:.4g}')
    return result
