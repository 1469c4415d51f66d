# Graded nilpotent group arithmetic in exponential coordinates of the first kind.
#
# A CarnotAlgebra stores its structure constants as a dense (D, D, D) tensor,
# [e_i, e_j] = sum_k C[i, j, k] e_k, with the basis ordered stratum by stratum.
# All group operations are vectorized over leading axes of coordinate arrays.

from dataclasses import dataclass, field, replace
from math import factorial
from typing import Callable, Iterator, List, NamedTuple, Optional, Sequence, Tuple
import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree
from loguru import logger
import settings
import liecore
from errors import (DimensionMismatchError, DegenerateInputError, LatticeCollisionError,
                    UnsupportedAlgebraError)


MAX_STEP = 3


class Bounds(NamedTuple):
    lower: float
    upper: float


@dataclass(frozen=True, eq=False)
class CarnotAlgebra:
    strata_dims: Tuple[int, ...]
    structure_constants: np.ndarray
    name: str = ''
    labels: Tuple[str, ...] = ()
    matrices: Optional[np.ndarray] = None  # (D, n, n) matrix realization of the basis, if any

    def __post_init__(self):
        dims = tuple(int(m) for m in self.strata_dims)
        C = np.array(self.structure_constants, dtype=float)
        D = sum(dims)
        if C.shape != (D, D, D):
            raise DimensionMismatchError(f'Structure constants must have shape {(D, D, D)}, got {C.shape}')
        if len(dims) > MAX_STEP:
            raise UnsupportedAlgebraError(f'BCH is implemented up to step {MAX_STEP}, got step {len(dims)}')
        if not np.allclose(C, -C.transpose(1, 0, 2), atol=settings.lie_residual_tol):
            raise DegenerateInputError('Structure constants are not antisymmetric')
        object.__setattr__(self, 'strata_dims', dims)
        C.setflags(write=False)
        object.__setattr__(self, 'structure_constants', C)
        stratum = np.repeat(np.arange(1, len(dims) + 1), dims)
        stratum.setflags(write=False)
        object.__setattr__(self, 'stratum_of', stratum)
        if not self.labels:
            object.__setattr__(self, 'labels', tuple(f'x{i}' for i in range(D)))
        self._check_grading()

    @property
    def dim(self) -> int:
        return sum(self.strata_dims)

    @property
    def step(self) -> int:
        return len(self.strata_dims)

    def stratum_slice(self, i: int) -> slice:
        start = sum(self.strata_dims[:i - 1])
        return slice(start, start + self.strata_dims[i - 1])

    def _check_grading(self) -> None:
        s = self.stratum_of
        idx = np.argwhere(np.abs(self.structure_constants) > settings.lie_residual_tol)
        for i, j, k in idx:
            if s[k] != s[i] + s[j]:
                raise DegenerateInputError(
                    f'[{self.labels[i]}, {self.labels[j]}] has a component on {self.labels[k]} '
                    f'outside stratum {s[i] + s[j]}')
        report = verify_stratification(self)
        if not report['generates']:
            raise DegenerateInputError(f'Stratum 1 does not generate the algebra: {report}')

    # vectorized brackets and BCH

    def bracket(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.einsum('...i,...j,ijk->...k', x, y, self.structure_constants)

    def ad(self, x: np.ndarray) -> np.ndarray:
        """ad_x as a (..., D, D) matrix acting on column vectors."""
        return np.einsum('...i,ijk->...kj', x, self.structure_constants)

    def multiply(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """BCH product, exact for step <= 3."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return x + self.increment(x, y)

    def increment(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """x.y - x computed without forming x + (...)."""
        if self.step == 1:
            return np.array(y, dtype=float, copy=True)
        xy = self.bracket(x, y)
        out = y + 0.5 * xy
        if self.step >= 3:
            out = out + (self.bracket(x, xy) - self.bracket(y, xy)) / 12.0
        return out

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return -np.asarray(x, dtype=float)

    def dilate(self, t: float, x: np.ndarray) -> np.ndarray:
        if not t > 0:
            raise DegenerateInputError(f'Dilation factor must be positive, got {t!r}')
        return np.asarray(x, dtype=float) * float(t) ** self.stratum_of

    def left_differential(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """d/ds (x . exp(s v)) at s = 0."""
        xv = self.bracket(x, v)
        out = v + 0.5 * xv
        if self.step >= 3:
            out = out + self.bracket(x, xv) / 12.0
        return out

    def left_trivialized_velocity(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Pull the velocity v at p back to the identity: sum_k (-1)^k / (k+1)! ad_p^k v."""
        out = np.array(v, dtype=float, copy=True)
        term = out
        for k in range(1, self.step):
            term = self.bracket(p, term)
            out = out + (-1) ** k / factorial(k + 1) * term
        return out

    # matrix realization

    def to_matrix(self, x: np.ndarray) -> np.ndarray:
        if self.matrices is None:
            raise UnsupportedAlgebraError(f'{self.name or "algebra"} has no matrix realization')
        return np.tensordot(np.asarray(x, dtype=float), self.matrices, axes=(-1, 0))

    def to_json(self) -> dict:
        nz = np.argwhere(np.abs(self.structure_constants) > 0)
        return {
            'name': self.name,
            'strata_dims': list(self.strata_dims),
            'labels': list(self.labels),
            'structure_constants': [[int(i), int(j), int(k), float(self.structure_constants[i, j, k])]
                                    for i, j, k in nz],
        }

    @classmethod
    def from_json(cls, obj: dict) -> 'CarnotAlgebra':
        D = sum(obj['strata_dims'])
        C = np.zeros((D, D, D))
        for i, j, k, c in obj['structure_constants']:
            C[i, j, k] = c
        return cls(tuple(obj['strata_dims']), C, obj.get('name', ''), tuple(obj.get('labels', ())))

    # constructors

    @classmethod
    def abelian(cls, n: int) -> 'CarnotAlgebra':
        return cls((n,), np.zeros((n, n, n)), f'R{n}', tuple(f'x{i}' for i in range(n)))

    @classmethod
    def from_root_datum(cls, datum: liecore.RootDatum) -> 'CarnotAlgebra':
        """The nilradical n = sum of positive root spaces, graded by root height."""
        order = [r for i in sorted(datum.grading) for r in datum.grading[i]]
        basis = [X for r in order for X in datum.root_spaces[r]]
        roots = [r for r in order for _ in datum.root_spaces[r]]
        D = len(basis)
        C = np.zeros((D, D, D))
        for i in range(D):
            for j in range(D):
                Z = liecore.bracket(basis[i], basis[j])
                if np.abs(Z.entries).max() > 0:
                    C[i, j] = liecore.coordinates([Z], basis)[:, 0]
        C[np.abs(C) < settings.lie_residual_tol] = 0.0
        dims = tuple(sum(len(datum.root_spaces[r]) for r in datum.grading[i]) for i in sorted(datum.grading))
        labels = tuple('E{}{}'.format(*(k + 1 for k in datum.labels[r])) for r in roots)
        matrices = np.stack([X.entries for X in basis])
        return cls(dims, C, f'n({datum.algebra_tag})', labels, matrices)

    @classmethod
    def heisenberg(cls) -> 'CarnotAlgebra':
        """Heisenberg algebra realized by E12, E23, E13 in sl(3, R): [x, y] = z."""
        algebra = cls.from_root_datum(liecore.restricted_roots('sl3r'))
        return replace(algebra, name='heisenberg')


def verify_stratification(algebra: CarnotAlgebra) -> dict:
    """Check that iterated brackets of stratum 1 span every stratum."""
    C = algebra.structure_constants
    tol = settings.lie_residual_tol
    s1 = algebra.stratum_slice(1)
    current = np.eye(algebra.dim)[s1]
    spans = [int(np.linalg.matrix_rank(current, tol=tol)) if current.size else 0]
    for i in range(2, algebra.step + 1):
        products = np.einsum('ai,bj,ijk->abk', np.eye(algebra.dim)[s1], current, C).reshape(-1, algebra.dim)
        current = products
        spans.append(int(np.linalg.matrix_rank(products, tol=tol)) if products.size else 0)
    return {
        'strata_dims': list(algebra.strata_dims),
        'generated_dims': spans,
        'generates': spans == list(algebra.strata_dims),
    }


@dataclass(frozen=True, eq=False)
class CarnotPoint:
    coords: np.ndarray
    algebra: CarnotAlgebra

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float).reshape(-1)
        if coords.shape[0] != self.algebra.dim:
            raise DimensionMismatchError(f'Expected {self.algebra.dim} coordinates, got {coords.shape[0]}')
        if not np.all(np.isfinite(coords)):
            raise DegenerateInputError('Coordinates must be finite')
        coords.setflags(write=False)
        object.__setattr__(self, 'coords', coords)

    def __mul__(self, other: 'CarnotPoint') -> 'CarnotPoint':
        return bch_multiply(self, other)

    def inverse(self) -> 'CarnotPoint':
        return CarnotPoint(-self.coords, self.algebra)

    def to_json(self) -> list:
        return self.coords.tolist()


def _same_algebra(p: CarnotPoint, q: CarnotPoint) -> None:
    if p.algebra is not q.algebra and p.algebra.to_json() != q.algebra.to_json():
        raise DimensionMismatchError('Points belong to different algebras')


def bch_multiply(p: CarnotPoint, q: CarnotPoint) -> CarnotPoint:
    _same_algebra(p, q)
    return CarnotPoint(p.algebra.multiply(p.coords, q.coords), p.algebra)


def dilate(t: float, p: CarnotPoint) -> CarnotPoint:
    return CarnotPoint(p.algebra.dilate(t, p.coords), p.algebra)


def dilation_pushforward_check(t: float, x: CarnotPoint, X, h: float = None) -> float:
    """Relative error between the central difference of s -> dilate(t, x exp(sX))
    and the left translate of the stratum-scaled X at dilate(t, x)."""
    algebra = x.algebra
    h = settings.carnot_fd_step if h is None else h
    X = np.asarray(X, dtype=float)
    if not np.any(X):
        raise DegenerateInputError('Tangent vector X must be nonzero')
    # differences of increments avoid cancelling the base point
    forward = algebra.dilate(t, algebra.increment(x.coords, h * X))
    backward = algebra.dilate(t, algebra.increment(x.coords, -h * X))
    fd = (forward - backward) / (2 * h)
    exact = algebra.left_differential(algebra.dilate(t, x.coords), algebra.dilate(t, X))
    return float(np.linalg.norm(fd - exact) / np.linalg.norm(exact))


# lattices

@dataclass(frozen=True, eq=False)
class LatticeSpec:
    algebra: CarnotAlgebra
    generators: np.ndarray  # (G, D), one row per generator
    description: str = ''
    names: Tuple[str, ...] = ()
    scale: float = 1.0
    margin: Optional[Bounds] = None

    def __post_init__(self):
        gens = np.array(self.generators, dtype=float).reshape(-1, self.algebra.dim)
        gens.setflags(write=False)
        object.__setattr__(self, 'generators', gens)
        if not self.names:
            object.__setattr__(self, 'names', tuple('abcdefghijklmnopqrstuvwxyz'[:len(gens)]))
        if len(self.names) != len(gens):
            raise DimensionMismatchError(f'{len(self.names)} names for {len(gens)} generators')

    @classmethod
    def integer(cls, algebra: CarnotAlgebra, description: str = '') -> 'LatticeSpec':
        """Lattice generated by the unit vectors of stratum 1."""
        gens = np.eye(algebra.dim)[algebra.stratum_slice(1)]
        return cls(algebra, gens, description or f'integer lattice of {algebra.name}')

    def symmetric_generators(self) -> Tuple[List[str], np.ndarray]:
        """Generators followed by their inverses; inverse names are upper case."""
        names = list(self.names) + [n.swapcase() for n in self.names]
        return names, np.vstack([self.generators, -self.generators])

    def element(self, word: str) -> CarnotPoint:
        names, gens = self.symmetric_generators()
        lookup = dict(zip(names, gens))
        x = np.zeros(self.algebra.dim)
        for letter in word:
            if letter not in lookup:
                raise KeyError(f'Letter {letter!r} is not a generator name of {self.description!r}')
            x = self.algebra.multiply(x, lookup[letter])
        return CarnotPoint(x, self.algebra)

    def to_json(self) -> dict:
        return {
            'algebra': self.algebra.to_json(),
            'generators': self.generators.tolist(),
            'names': list(self.names),
            'description': self.description,
            'scale': self.scale,
            'margin': None if self.margin is None else list(self.margin),
        }

    @classmethod
    def from_json(cls, obj: dict) -> 'LatticeSpec':
        margin = obj.get('margin')
        return cls(CarnotAlgebra.from_json(obj['algebra']), np.array(obj['generators']),
                   obj.get('description', ''), tuple(obj.get('names', ())), obj.get('scale', 1.0),
                   None if margin is None else Bounds(*margin))


def coordinate_keys(coords: np.ndarray, eps: float = None) -> np.ndarray:
    eps = settings.carnot_dedup_eps if eps is None else eps
    return np.round(np.asarray(coords) / eps).astype(np.int64)


@dataclass
class LatticeBall:
    spec: LatticeSpec
    radius: int
    coords: np.ndarray  # (M, D) in BFS order
    lengths: np.ndarray  # (M,)
    words: List[str]
    _index: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.words)

    def __iter__(self) -> Iterator[Tuple[CarnotPoint, int]]:
        for x, n in zip(self.coords, self.lengths):
            yield CarnotPoint(x, self.spec.algebra), int(n)

    def sphere_sizes(self) -> List[int]:
        return np.bincount(self.lengths, minlength=self.radius + 1).tolist()

    def index_of(self, coords: np.ndarray) -> np.ndarray:
        """Row index of each coordinate vector in the ball, -1 when absent."""
        keys = coordinate_keys(np.atleast_2d(coords))
        return np.array([self._index.get(tuple(k), -1) for k in keys], dtype=np.int64)


def lattice_ball(spec: LatticeSpec, r: int) -> LatticeBall:
    """Breadth-first enumeration of all elements of word length <= r."""
    if r < 0:
        raise DegenerateInputError(f'Word radius must be nonnegative, got {r}')
    algebra = spec.algebra
    names, gens = spec.symmetric_generators()
    origin = np.zeros(algebra.dim)
    index = {tuple(coordinate_keys(origin)): 0}
    coords, lengths, words = [origin], [0], ['']
    frontier, frontier_words = origin[None, :], ['']
    for length in range(1, r + 1):
        cand = algebra.multiply(frontier[:, None, :], gens[None, :, :]).reshape(-1, algebra.dim)
        keys = coordinate_keys(cand)
        new_rows, new_words = [], []
        for row, key in enumerate(map(tuple, keys)):
            if key in index:
                continue
            index[key] = len(coords)
            coords.append(cand[row])
            lengths.append(length)
            word = frontier_words[row // len(gens)] + names[row % len(gens)]
            words.append(word)
            new_rows.append(row)
            new_words.append(word)
        frontier, frontier_words = cand[new_rows], new_words
        logger.debug(f'lattice_ball: sphere {length} has {len(new_rows)} elements')
        if not new_rows:
            break
    coords = np.array(coords)
    close = cKDTree(coords).query_pairs(settings.carnot_dedup_eps)
    if close:
        i, j = sorted(close)[0]
        raise LatticeCollisionError(
            f'Words {words[i]!r} and {words[j]!r} are closer than the dedup epsilon but hash differently')
    return LatticeBall(spec, r, coords, np.array(lengths, dtype=np.int64), words, index)


def growth_profile(spec: LatticeSpec, radii: Sequence[int]) -> dict:
    """Ball sizes |B_r| with log|B_r| / log r and the log-log slope over `radii`."""
    radii = sorted(int(r) for r in radii)
    ball = lattice_ball(spec, radii[-1])
    cumulative = np.cumsum(ball.sphere_sizes())
    sizes = [int(cumulative[min(r, len(cumulative) - 1)]) for r in radii]
    rows = [{'r': r, 'ball': n, 'log_ratio': float(np.log(n) / np.log(r)) if r > 1 else None}
            for r, n in zip(radii, sizes)]
    usable = [(r, n) for r, n in zip(radii, sizes) if r > 1]
    slope = None
    if len(usable) >= 2:
        lr, ln = np.log([u[0] for u in usable]), np.log([u[1] for u in usable])
        slope = float(np.polyfit(lr, ln, 1)[0])
    return {'rows': rows, 'slope': slope}


# left-invariant metric and d0

@dataclass(frozen=True, eq=False)
class CarnotMetric:
    """Diagonal left-invariant metric: |v|^2 = sum_k weights[k] v_k^2 at the identity."""
    algebra: CarnotAlgebra
    weights: np.ndarray

    def __post_init__(self):
        w = np.broadcast_to(np.asarray(self.weights, dtype=float), (self.algebra.dim,)).copy()
        if np.any(w <= 0):
            raise DegenerateInputError('Metric weights must be positive')
        w.setflags(write=False)
        object.__setattr__(self, 'weights', w)

    @classmethod
    def uniform(cls, algebra: CarnotAlgebra, per_stratum: Sequence[float] = None) -> 'CarnotMetric':
        per_stratum = per_stratum or [1.0] * algebra.step
        return cls(algebra, np.asarray(per_stratum, dtype=float)[algebra.stratum_of - 1])

    def norm(self, v: np.ndarray) -> np.ndarray:
        return np.sqrt(np.einsum('...k,k->...', np.square(v), self.weights))

    def scaled(self, factors: np.ndarray) -> 'CarnotMetric':
        return CarnotMetric(self.algebra, self.weights * factors)


def _as_nodes(path, algebra: CarnotAlgebra) -> np.ndarray:
    if len(path) and isinstance(path[0], CarnotPoint):
        return np.stack([p.coords for p in path])
    nodes = np.asarray(path, dtype=float)
    if nodes.ndim != 2 or nodes.shape[1] != algebra.dim:
        raise DimensionMismatchError(f'Path nodes must have shape (K, {algebra.dim})')
    return nodes


def simpson_weights(panels: int) -> Tuple[np.ndarray, np.ndarray]:
    """Sample parameters in [0, 1] and composite Simpson weights."""
    t = np.linspace(0.0, 1.0, 2 * panels + 1)
    w = np.ones_like(t)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    return t, w / (6.0 * panels)


def riemannian_length_d0(path, metric: CarnotMetric) -> float:
    algebra = metric.algebra
    nodes = _as_nodes(path, algebra)
    if len(nodes) < 2:
        raise DegenerateInputError('A path needs at least two nodes')
    return float(_polyline_length(nodes, metric).sum())


def _polyline_length(nodes: np.ndarray, metric: CarnotMetric) -> np.ndarray:
    """Per-segment lengths of the polyline through `nodes` (exact for step <= 2)."""
    algebra = metric.algebra
    d = np.diff(nodes, axis=0)
    if algebra.step <= 2:
        omega = d - 0.5 * algebra.bracket(nodes[:-1], d)
        return metric.norm(omega)
    t, w = simpson_weights(int(settings.path_simpson_panels))
    p = nodes[:-1, None, :] + t[None, :, None] * d[:, None, :]
    omega = algebra.left_trivialized_velocity(p, np.broadcast_to(d[:, None, :], p.shape))
    return metric.norm(omega) @ w


def bracket_adjoint(algebra: CarnotAlgebra, x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """ad_x^T g, row by row."""
    return np.einsum('...i,ijk,...k->...j', x, algebra.structure_constants, g)


def omega_pullback(algebra: CarnotAlgebra, nodes: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. `nodes` of sum_s <g_s, omega_s> with omega_s = d_s - [P_s, P_(s+1)] / 2."""
    grad = np.zeros_like(nodes)
    grad[:-1] += -g + 0.5 * bracket_adjoint(algebra, nodes[1:], g)
    grad[1:] += g - 0.5 * bracket_adjoint(algebra, nodes[:-1], g)
    return grad


def _polyline_length_grad(nodes: np.ndarray, metric: CarnotMetric) -> Tuple[float, np.ndarray]:
    """Length of a step <= 2 polyline and its gradient w.r.t. all nodes."""
    algebra = metric.algebra
    d = np.diff(nodes, axis=0)
    omega = d - 0.5 * algebra.bracket(nodes[:-1], d)
    norms = metric.norm(omega)
    g = omega * metric.weights / np.maximum(norms, 1e-300)[:, None]
    g[norms == 0] = 0.0
    return float(norms.sum()), omega_pullback(algebra, nodes, g)


class PathResult(NamedTuple):
    length: float
    nodes: np.ndarray
    converged: bool
    levels: int


def optimize_polyline(length_fn: Callable, start: np.ndarray, end: np.ndarray, jac: bool = False,
                      max_levels: int = None, rel_tol: float = None) -> PathResult:
    """Shorten the polyline from `start` to `end` by L-BFGS-B on interior nodes with dyadic refinement.

    `length_fn(nodes)` returns the length, or (length, gradient w.r.t. nodes) when `jac` is set.
    Every returned length is the length of an actual polyline, so it is an upper bound.
    """
    max_levels = settings.path_max_levels if max_levels is None else max_levels
    rel_tol = settings.path_rel_tol if rel_tol is None else rel_tol
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)

    def value(nodes):
        return length_fn(nodes)[0] if jac else length_fn(nodes)

    nodes = np.stack([start, end])
    best = value(nodes)
    converged, level = False, 0
    for level in range(1, max_levels + 1):
        refined = np.empty((2 * len(nodes) - 1, nodes.shape[1]))
        refined[0::2], refined[1::2] = nodes, 0.5 * (nodes[:-1] + nodes[1:])
        shape = refined[1:-1].shape

        def fun(flat):
            full = np.vstack([start, flat.reshape(shape), end])
            if not jac:
                return length_fn(full)
            length, grad = length_fn(full)
            return length, grad[1:-1].ravel()

        res = minimize(fun, refined[1:-1].ravel(), jac=jac, method='L-BFGS-B',
                       options={'maxiter': int(settings.path_max_iter)})
        initial = value(refined)
        if float(res.fun) <= initial:
            nodes, current = np.vstack([start, res.x.reshape(shape), end]), float(res.fun)
        else:
            nodes, current = refined, initial
        improvement = (best - current) / best if best > 0 else 0.0
        logger.debug(f'optimize_polyline: level {level}, {len(nodes) - 1} segments, length {current:.8g}')
        best = min(best, current)
        if level >= 2 and improvement < rel_tol:
            converged = True
            break
    if not converged:
        logger.warning(f'Polyline optimizer stopped after {level} levels without reaching '
                       f'relative improvement {rel_tol:g}; upper bound {best:.6g} is still valid')
    return PathResult(best, nodes, converged, level)


def _canonical_sign(u: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(u) > 1e-12)
    return -u if nz.size and u[nz[0]] < 0 else u


def bracket_bound(algebra: CarnotAlgebra) -> float:
    """K with |[x, y]| <= K |x| |y| for x, y in stratum 1 (Euclidean norms)."""
    if algebra.step < 2:
        return 0.0
    s1, s2 = algebra.stratum_slice(1), algebra.stratum_slice(2)
    blocks = algebra.structure_constants[s1, s1, s2]
    return float(np.sqrt(sum(np.linalg.norm(blocks[:, :, k], 2) ** 2 for k in range(blocks.shape[2]))))


def d0_lower_bounds(u: np.ndarray, metric: CarnotMetric, weights: np.ndarray = None) -> np.ndarray:
    """Lower bounds on d0(0, u) for each row of u.

    Any path of length L to u has |u_1| <= L and |u_2| <= L / sqrt(c2) + K L^2 / (4 c1),
    with c_i the smallest weight of stratum i; the bound is the larger inversion.
    `weights` may give one weight vector per row instead of the metric's.
    """
    algebra = metric.algebra
    u = np.atleast_2d(np.asarray(u, dtype=float))
    w = np.broadcast_to(metric.weights if weights is None else np.asarray(weights, dtype=float), u.shape)
    s1 = algebra.stratum_slice(1)
    flat = np.sqrt(np.sum(np.square(u[:, s1]) * w[:, s1], axis=1))
    if algebra.step < 2:
        return flat
    s2 = algebra.stratum_slice(2)
    c1, c2 = w[:, s1].min(axis=1), w[:, s2].min(axis=1)
    K = bracket_bound(algebra)
    z = np.linalg.norm(u[:, s2], axis=1)
    if K > 0:
        qa, qb = K / (4.0 * c1), 1.0 / np.sqrt(c2)
        area = (-qb + np.sqrt(qb * qb + 4.0 * qa * z)) / (2.0 * qa)
    else:
        area = z * np.sqrt(c2)
    return np.maximum(flat, area)


def distance_d0(p: CarnotPoint, q: CarnotPoint, metric: CarnotMetric = None) -> Bounds:
    _same_algebra(p, q)
    algebra = p.algebra
    metric = metric or CarnotMetric.uniform(algebra)
    u = _canonical_sign(algebra.multiply(-p.coords, q.coords))
    lower = float(d0_lower_bounds(u, metric)[0])
    if algebra.step == 1 or not np.any(u):
        return Bounds(lower, lower)
    if algebra.step <= 2:
        res = optimize_polyline(lambda nodes: _polyline_length_grad(nodes, metric), np.zeros_like(u), u, jac=True)
    else:
        res = optimize_polyline(lambda nodes: float(_polyline_length(nodes, metric).sum()), np.zeros_like(u), u)
    return Bounds(lower, max(lower, res.length))


def rescale_lattice(spec: LatticeSpec, s: float, metric: CarnotMetric = None) -> LatticeSpec:
    """Dilate the generators by s and report the minimum pairwise d0 on a window.

    margin.lower is the smallest lower bound over all window differences; margin.upper is
    the smallest optimized upper bound among the closest candidates.
    """
    algebra = spec.algebra
    gens = algebra.dilate(s, spec.generators)
    out = LatticeSpec(algebra, gens, spec.description, spec.names, spec.scale * s)
    metric = metric or CarnotMetric.uniform(algebra)
    ball = lattice_ball(out, int(settings.carnot_margin_radius))
    x = ball.coords
    i, j = np.triu_indices(len(x), k=1)
    if i.size == 0:
        return replace(out, margin=Bounds(np.inf, np.inf))
    diffs = algebra.multiply(-x[i], x[j])
    lows = d0_lower_bounds(diffs, metric)
    margin_lower = float(lows.min())
    _, first = np.unique(coordinate_keys(np.array([_canonical_sign(u) for u in diffs])), axis=0, return_index=True)
    order = first[np.argsort(lows[first], kind='stable')][:int(settings.carnot_margin_candidates)]
    origin = CarnotPoint(np.zeros(algebra.dim), algebra)
    margin_upper = min(distance_d0(origin, CarnotPoint(diffs[k], algebra), metric).upper for k in order)
    logger.info(f'rescale_lattice: s = {s:g}, window margin in [{margin_lower:.6g}, {margin_upper:.6g}]')
    return replace(out, margin=Bounds(margin_lower, margin_upper))
