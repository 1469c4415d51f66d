# The model G/K = R^rank x N with the warped metric
#     |da|^2 + sum_beta c_beta beta(a) |omega_beta|^2,
# where omega is the left-trivialized leaf velocity and beta(a) = exp(<e_beta, a>).

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple
import numpy as np
from scipy.special import lambertw
from loguru import logger
import settings
import carnot
from carnot import Bounds, CarnotAlgebra, CarnotMetric, CarnotPoint
from errors import DegenerateInputError, DimensionMismatchError


def char_eval(beta, a) -> np.ndarray:
    """beta(a) = exp(<beta, a>) for an exponent vector beta; vectorized over leading axes of a."""
    return np.exp(np.asarray(a, dtype=float) @ np.asarray(beta, dtype=float))


@dataclass(frozen=True, eq=False)
class WarpedMetric:
    algebra: CarnotAlgebra
    exponents: np.ndarray  # (R, rank)
    root_of: np.ndarray  # (D,) root owning each leaf coordinate
    base_weights: np.ndarray  # (R,) c_beta
    names: Tuple[str, ...] = ()

    def __post_init__(self):
        exps = np.atleast_2d(np.asarray(self.exponents, dtype=float))
        root_of = np.asarray(self.root_of, dtype=np.int64)
        weights = np.broadcast_to(np.asarray(self.base_weights, dtype=float), (len(exps),)).copy()
        if root_of.shape != (self.algebra.dim,) or root_of.min() < 0 or root_of.max() >= len(exps):
            raise DimensionMismatchError('root_of must assign one root to every leaf coordinate')
        if np.any(weights <= 0):
            raise DegenerateInputError('Base forms must be positive')
        for r in range(len(exps)):
            strata = set(self.algebra.stratum_of[root_of == r].tolist())
            if len(strata) != 1:
                raise DimensionMismatchError(f'Root {r} owns coordinates from strata {sorted(strata)}')
        for arr in (exps, root_of, weights):
            arr.setflags(write=False)
        object.__setattr__(self, 'exponents', exps)
        object.__setattr__(self, 'root_of', root_of)
        object.__setattr__(self, 'base_weights', weights)
        if not self.names:
            object.__setattr__(self, 'names', tuple(f'beta{r}' for r in range(len(exps))))

    @property
    def rank(self) -> int:
        return self.exponents.shape[1]

    @property
    def strata(self) -> List[int]:
        return [int(self.algebra.stratum_of[self.root_of == r][0]) for r in range(len(self.exponents))]

    @property
    def coord_exponents(self) -> np.ndarray:
        return self.exponents[self.root_of]

    @property
    def hyperbolic_kappa(self) -> Optional[float]:
        """kappa when the metric is a rescaled real hyperbolic space (rank 1, abelian N, one root)."""
        if self.rank == 1 and self.algebra.step == 1 and len(self.exponents) == 1 and self.exponents[0, 0] > 0:
            return float(self.exponents[0, 0]) / 2.0
        return None

    @property
    def closed_form(self) -> bool:
        return self.hyperbolic_kappa is not None

    def character(self, beta: int) -> np.ndarray:
        return self.exponents[beta]

    def leaf_weights(self, a) -> np.ndarray:
        """Per-coordinate weights c_beta beta(a) of the leaf metric, shape (..., D)."""
        return self.base_weights[self.root_of] * np.exp(np.asarray(a, dtype=float) @ self.coord_exponents.T)

    def leaf_metric(self, a) -> CarnotMetric:
        return CarnotMetric(self.algebra, self.leaf_weights(a))

    def base_metric(self) -> CarnotMetric:
        return CarnotMetric(self.algebra, self.base_weights[self.root_of])

    def f_factors(self, a) -> np.ndarray:
        """f_(beta,i)(a) = beta(a)^(-1/(2i)) per root, shape (..., R)."""
        strata = np.asarray(self.strata, dtype=float)
        return np.exp(-(np.asarray(a, dtype=float) @ self.exponents.T) / (2.0 * strata))

    def f_scale(self, a) -> np.ndarray:
        """Coordinate scaling of F_a: each root block dilated by its f factor, shape (..., D)."""
        return self.f_factors(a)[..., self.root_of] ** self.algebra.stratum_of

    @classmethod
    def hyperbolic(cls, dim: int) -> 'WarpedMetric':
        """Upper half-space H^dim: da^2 + e^(2a) |dn|^2 with z = e^(-a)."""
        return cls(CarnotAlgebra.abelian(dim - 1), [[2.0]], np.zeros(dim - 1, dtype=np.int64), [1.0], ('beta',))

    @classmethod
    def from_root_datum(cls, datum, algebra: CarnotAlgebra = None, scale: float = np.sqrt(2)) -> 'WarpedMetric':
        algebra = algebra or CarnotAlgebra.from_root_datum(datum)
        order = [r for i in sorted(datum.grading) for r in datum.grading[i]]
        exps = scale * datum.roots[order]
        root_of = np.repeat(np.arange(len(order)), [len(datum.root_spaces[r]) for r in order])
        names = tuple('e{}-e{}'.format(*(k + 1 for k in datum.labels[r])) for r in order)
        return cls(algebra, exps, root_of, np.ones(len(order)), names)


@dataclass(frozen=True, eq=False)
class HorocyclicPoint:
    a: np.ndarray
    n: CarnotPoint

    def __post_init__(self):
        a = np.array(self.a, dtype=float).reshape(-1)
        if not np.all(np.isfinite(a)):
            raise DegenerateInputError('Flat coordinates must be finite')
        a.setflags(write=False)
        object.__setattr__(self, 'a', a)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.a, self.n.coords])


def F_map(a, n: CarnotPoint, metric: WarpedMetric) -> CarnotPoint:
    """Leafwise dilation F_a: dilate every root block of stratum i by f_(beta,i)(a)."""
    coords = np.array(n.coords, dtype=float)
    f = metric.f_factors(a)
    for beta in range(len(metric.exponents)):
        block = metric.root_of == beta
        coords[block] = n.algebra.dilate(f[beta], coords)[block]
    return CarnotPoint(coords, n.algebra)


# lengths

def _nodes(path, metric: WarpedMetric) -> np.ndarray:
    if len(path) and isinstance(path[0], HorocyclicPoint):
        return np.stack([p.as_array() for p in path])
    nodes = np.asarray(path, dtype=float)
    if nodes.ndim != 2 or nodes.shape[1] != metric.rank + metric.algebra.dim:
        raise DimensionMismatchError(f'Path nodes must have shape (K, {metric.rank + metric.algebra.dim})')
    return nodes


def _leaf_velocity(metric: WarpedMetric, N: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Left-trivialized leaf velocity per segment and sample, shape (S, T, D)."""
    algebra = metric.algebra
    dN = np.diff(N, axis=0)
    if algebra.step <= 2:
        omega = dN - 0.5 * algebra.bracket(N[:-1], dN)
        return np.broadcast_to(omega[:, None, :], (len(dN), len(t), algebra.dim))
    p = N[:-1, None, :] + t[None, :, None] * dN[:, None, :]
    return algebra.left_trivialized_velocity(p, np.broadcast_to(dN[:, None, :], p.shape))


def _warped_length(nodes: np.ndarray, metric: WarpedMetric, grad: bool = False):
    r = metric.rank
    A, N = nodes[:, :r], nodes[:, r:]
    dA = np.diff(A, axis=0)
    t, w = carnot.simpson_weights(int(settings.path_simpson_panels))
    a_t = A[:-1, None, :] + t[None, :, None] * dA[:, None, :]
    W = metric.leaf_weights(a_t)  # (S, T, D)
    omega = _leaf_velocity(metric, N, t)
    f = np.sqrt(np.sum(dA * dA, axis=1)[:, None] + np.sum(W * omega * omega, axis=2))
    length = float(np.sum(f @ w))
    if not grad:
        return length
    h = np.where(f > 0, w[None, :] / np.where(f > 0, f, 1.0), 0.0)  # (S, T)
    g_dA = dA * h.sum(axis=1)[:, None]
    Q = 0.5 * h[:, :, None] * ((W * omega * omega) @ metric.coord_exponents)  # (S, T, r)
    gA = np.zeros_like(A)
    gA[:-1] += -g_dA + np.einsum('t,stk->sk', 1.0 - t, Q)
    gA[1:] += g_dA + np.einsum('t,stk->sk', t, Q)
    g_omega = np.sum(h[:, :, None] * W * omega, axis=1)  # (S, D)
    gN = carnot.omega_pullback(metric.algebra, N, g_omega)
    return length, np.hstack([gA, gN])


def path_length_GK(path, metric: WarpedMetric) -> float:
    nodes = _nodes(path, metric)
    if len(nodes) < 2:
        raise DegenerateInputError('A path needs at least two nodes')
    return _warped_length(nodes, metric)


def path_length_leaf(path, a, metric: WarpedMetric) -> float:
    """Length l_a of a leaf path (CarnotPoints or coordinate rows) in the leaf {a} x N."""
    return carnot.riemannian_length_d0(path, metric.leaf_metric(a))


# distances

def hyperbolic_distance(a1, x1, a2, x2) -> np.ndarray:
    """Upper half-space distance in horocyclic coordinates (z = e^(-a)), vectorized.

    x1, x2 carry a trailing coordinate axis. cosh d = 1 + (|x1 - x2|^2 + (z1 - z2)^2) / (2 z1 z2),
    evaluated as 2 asinh(sqrt(delta / 2)).
    """
    a1, a2 = np.asarray(a1, dtype=float), np.asarray(a2, dtype=float)
    dx = np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)
    sq = np.sum(dx * dx, axis=-1)
    # (|dx|^2 + (z1 - z2)^2) / (4 z1 z2) with z = e^(-a)
    half = 0.25 * sq * np.exp(a1 + a2) + np.sinh(0.5 * (a1 - a2)) ** 2
    return 2.0 * np.arcsinh(np.sqrt(half))


def closed_form_distance(pa, pn, qa, qn, metric: WarpedMetric) -> np.ndarray:
    """Exact distance for metrics with a hyperbolic_kappa; arrays are (..., 1) and (..., D)."""
    kappa = metric.hyperbolic_kappa
    c = float(metric.base_weights[0])
    scale = np.sqrt(c) * kappa
    pa, qa = np.asarray(pa, dtype=float)[..., 0], np.asarray(qa, dtype=float)[..., 0]
    return hyperbolic_distance(kappa * pa, scale * np.asarray(pn), kappa * qa, scale * np.asarray(qn)) / kappa


def ambient_lower_bound(pa, pn, qa, qn, metric: WarpedMetric) -> np.ndarray:
    """Lower bound on the warped distance for arrays of point pairs.

    Maximum of |da|, the hyperbolic-plane projections of every stratum-1 root and the
    growth bound: along a path of length L the leaf weights shrink at most by e^(-2 kappa L),
    so L e^(kappa L) dominates the d0 lower bound of n_p^-1 n_q in the leaf metric.
    """
    algebra = metric.algebra
    pa, qa = np.atleast_2d(np.asarray(pa, dtype=float)), np.atleast_2d(np.asarray(qa, dtype=float))
    pn, qn = np.atleast_2d(np.asarray(pn, dtype=float)), np.atleast_2d(np.asarray(qn, dtype=float))
    bound = np.linalg.norm(pa - qa, axis=-1)
    if metric.closed_form:
        return np.maximum(bound, closed_form_distance(pa, pn, qa, qn, metric))
    for beta, stratum in enumerate(metric.strata):
        e = metric.exponents[beta]
        norm_e = np.linalg.norm(e)
        if stratum != 1 or norm_e == 0:
            continue
        kappa = norm_e / 2.0
        block = metric.root_of == beta
        scale = np.sqrt(metric.base_weights[beta]) * kappa
        proj = hyperbolic_distance(pa @ e / 2.0, scale * pn[:, block], qa @ e / 2.0, scale * qn[:, block]) / kappa
        bound = np.maximum(bound, proj)
    kappa = np.linalg.norm(metric.exponents, axis=1).max() / 2.0
    u = algebra.multiply(-pn, qn)
    for base, diff in ((pa, u), (qa, -u)):
        lows = carnot.d0_lower_bounds(diff, metric.base_metric(), weights=metric.leaf_weights(base))
        growth = np.real(lambertw(kappa * lows)) / kappa if kappa > 0 else lows
        bound = np.maximum(bound, growth)
    return bound


def _pair_arrays(p: HorocyclicPoint, q: HorocyclicPoint):
    return p.a[None, :], p.n.coords[None, :], q.a[None, :], q.n.coords[None, :]


def distance_GK(p: HorocyclicPoint, q: HorocyclicPoint, metric: WarpedMetric) -> Bounds:
    arrays = _pair_arrays(p, q)
    if metric.closed_form:
        d = float(closed_form_distance(*arrays, metric)[0])
        return Bounds(d, d)
    x, y = p.as_array(), q.as_array()
    if np.array_equal(x, y):
        return Bounds(0.0, 0.0)
    lower = float(ambient_lower_bound(*arrays, metric)[0])
    if metric.algebra.step <= 2:
        res = carnot.optimize_polyline(lambda nodes: _warped_length(nodes, metric, grad=True), x, y, jac=True)
    else:
        res = carnot.optimize_polyline(lambda nodes: _warped_length(nodes, metric), x, y)
    return Bounds(lower, max(lower, res.length))


def optimized_upper_bound(p: HorocyclicPoint, q: HorocyclicPoint, metric: WarpedMetric) -> carnot.PathResult:
    """Polyline optimizer result even for closed-form metrics (used to validate the optimizer)."""
    x, y = p.as_array(), q.as_array()
    return carnot.optimize_polyline(lambda nodes: _warped_length(nodes, metric, grad=True), x, y, jac=True)


def leaf_distance_da(a, x: CarnotPoint, y: CarnotPoint, metric: WarpedMetric) -> Bounds:
    return carnot.distance_d0(x, y, metric.leaf_metric(a))


class DistortionRow(NamedTuple):
    a: float
    d0: float
    dGK_lower: float
    dGK_upper: float
    ratio: float


@dataclass
class DistortionProfile:
    rows: List[DistortionRow]
    c1: float
    c2: float

    def to_json(self) -> dict:
        return {'c1': self.c1, 'c2': self.c2, 'rows': [r._asdict() for r in self.rows]}


def distortion_profile(a, pairs: Sequence[Tuple[CarnotPoint, CarnotPoint]], metric: WarpedMetric) -> DistortionProfile:
    """Ambient distance of F_a-embedded lattice pairs against ln d0.

    C1 is the smallest ratio dGK_lower / ln d0, C2 the largest ratio dGK_upper / ln d0.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    rows, lows, highs = [], [], []
    base = metric.base_metric()
    for x, y in pairs:
        d0 = carnot.distance_d0(x, y, base)
        if d0.lower <= 1:
            raise DegenerateInputError(f'distortion_profile needs d0 > 1, got lower bound {d0.lower:.6g}')
        amb = distance_GK(HorocyclicPoint(a, F_map(a, x, metric)), HorocyclicPoint(a, F_map(a, y, metric)), metric)
        lows.append(amb.lower / np.log(d0.upper))
        highs.append(amb.upper / np.log(d0.lower))
        rows.append(DistortionRow(float(a[0]) if a.size == 1 else float(np.linalg.norm(a)),
                                  d0.upper, amb.lower, amb.upper, amb.upper / np.log(d0.upper)))
    if not rows:
        raise DegenerateInputError('distortion_profile needs at least one pair')
    profile = DistortionProfile(rows, float(min(lows)), float(max(highs)))
    logger.debug(f'distortion_profile: C1 = {profile.c1:.4f}, C2 = {profile.c2:.4f} over {len(rows)} pairs')
    return profile
