# Matrix Lie algebra and group primitives for the split real families sl(n, R).
# Conventions: theta(X) = -X^T, the flat subalgebra a is the traceless diagonal,
# positive roots are e_i - e_j with i < j, and N is the unit upper triangular group.

import re
import itertools
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple
import numpy as np
from scipy.linalg import expm, qr
from loguru import logger
import settings
from errors import (DimensionMismatchError, SingularMatrixError, NotUnipotentError,
                    UnsupportedAlgebraError, DegenerateInputError)


REGISTERED_ALGEBRAS = ('sl2r', 'sl3r')
_sl_tag = re.compile(r'sl(\d+)r')


def sl_rank(tag: str) -> int:
    """Matrix size n of an `sl{n}r` tag."""
    m = _sl_tag.fullmatch(tag or '')
    if m is None or int(m.group(1)) < 2:
        raise UnsupportedAlgebraError(
            f'Unsupported algebra tag {tag!r}; registered: {list(REGISTERED_ALGEBRAS)} (any sl{{n}}r with n >= 2 is accepted)')
    return int(m.group(1))


@dataclass(frozen=True, eq=False)
class AlgebraElement:
    entries: np.ndarray
    algebra_tag: str = 'sl3r'

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise DimensionMismatchError(f'Expected a square matrix, got shape {entries.shape}')
        if _sl_tag.fullmatch(self.algebra_tag):
            n = sl_rank(self.algebra_tag)
            if entries.shape[0] != n:
                raise DimensionMismatchError(f'{self.algebra_tag} needs {n}x{n} matrices, got {entries.shape}')
            tr = np.trace(entries)
            if abs(tr) > settings.lie_tol:
                raise DegenerateInputError(f'Trace {tr:.3g} of an {self.algebra_tag} element is not zero')
            entries = entries - tr / n * np.eye(n)
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __add__(self, other: 'AlgebraElement') -> 'AlgebraElement':
        _check_compatible(self, other)
        return AlgebraElement(self.entries + other.entries, self.algebra_tag)

    def __sub__(self, other: 'AlgebraElement') -> 'AlgebraElement':
        _check_compatible(self, other)
        return AlgebraElement(self.entries - other.entries, self.algebra_tag)

    def __mul__(self, scalar: float) -> 'AlgebraElement':
        return AlgebraElement(self.entries * scalar, self.algebra_tag)

    __rmul__ = __mul__

    def __neg__(self) -> 'AlgebraElement':
        return AlgebraElement(-self.entries, self.algebra_tag)

    def to_json(self) -> dict:
        return {'algebra_tag': self.algebra_tag, 'entries': self.entries.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> 'AlgebraElement':
        return cls(np.array(obj['entries'], dtype=float), obj['algebra_tag'])


@dataclass(frozen=True, eq=False)
class GroupElement:
    entries: np.ndarray
    group_tag: str = 'sl3r'

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise DimensionMismatchError(f'Expected a square matrix, got shape {entries.shape}')
        if _sl_tag.fullmatch(self.group_tag):
            det = np.linalg.det(entries)
            if abs(det - 1) > settings.lie_tol * max(1.0, np.abs(entries).max() ** entries.shape[0]):
                raise DegenerateInputError(f'Determinant {det!r} of an SL element is not 1')
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    def __matmul__(self, other: 'GroupElement') -> 'GroupElement':
        if self.entries.shape != other.entries.shape:
            raise DimensionMismatchError(f'Cannot multiply {self.entries.shape} by {other.entries.shape}')
        return GroupElement(self.entries @ other.entries, self.group_tag)

    def inverse(self) -> 'GroupElement':
        return GroupElement(np.linalg.inv(self.entries), self.group_tag)

    def to_json(self) -> dict:
        return {'group_tag': self.group_tag, 'entries': self.entries.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> 'GroupElement':
        return cls(np.array(obj['entries'], dtype=float), obj['group_tag'])


def _check_compatible(X: AlgebraElement, Y: AlgebraElement) -> None:
    if X.algebra_tag != Y.algebra_tag or X.entries.shape != Y.entries.shape:
        raise DimensionMismatchError(
            f'Incompatible elements: {X.algebra_tag}{X.entries.shape} vs {Y.algebra_tag}{Y.entries.shape}')


def bracket(X: AlgebraElement, Y: AlgebraElement) -> AlgebraElement:
    _check_compatible(X, Y)
    return AlgebraElement(X.entries @ Y.entries - Y.entries @ X.entries, X.algebra_tag)


def _basis_matrix(basis: Sequence[AlgebraElement]) -> np.ndarray:
    if not basis:
        raise DegenerateInputError('Empty basis')
    mat = np.stack([b.entries.ravel() for b in basis], axis=1)
    gram = mat.T @ mat
    rank = np.linalg.matrix_rank(gram, tol=settings.lie_residual_tol * max(1.0, np.abs(gram).max()))
    if rank < len(basis):
        raise DegenerateInputError(f'Basis is not linearly independent (Gram rank {rank} < {len(basis)})')
    return mat


def coordinates(Xs: Sequence[AlgebraElement], basis: Sequence[AlgebraElement], mat: np.ndarray = None) -> np.ndarray:
    """Coordinates of each X against `basis`, one column per X."""
    mat = _basis_matrix(basis) if mat is None else mat
    rhs = np.stack([X.entries.ravel() for X in Xs], axis=1)
    coef, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
    residual = np.abs(mat @ coef - rhs).max()
    if residual > settings.lie_residual_tol * max(1.0, np.abs(rhs).max()):
        raise DegenerateInputError(f'Element not in the span of the basis (residual {residual:.3g})')
    return coef


def ad_matrix(X: AlgebraElement, basis: Sequence[AlgebraElement]) -> np.ndarray:
    """Matrix of ad_X in `basis`: column j holds the coordinates of [X, b_j]."""
    mat = _basis_matrix(basis)
    return coordinates([bracket(X, b) for b in basis], basis, mat)


def killing_form(X: AlgebraElement, Y: AlgebraElement, basis: Sequence[AlgebraElement]) -> float:
    return float(np.trace(ad_matrix(X, basis) @ ad_matrix(Y, basis)))


def cartan_involution(X: AlgebraElement) -> AlgebraElement:
    return AlgebraElement(-X.entries.T, X.algebra_tag)


def theta_form(X: AlgebraElement, Y: AlgebraElement, basis: Sequence[AlgebraElement]) -> float:
    """B_theta(X, Y) = -B(X, theta Y); positive definite for the split forms implemented here."""
    return -killing_form(X, cartan_involution(Y), basis)


def theta_gram(basis: Sequence[AlgebraElement]) -> np.ndarray:
    return np.array([[theta_form(X, Y, basis) for Y in basis] for X in basis])


def cartan_decompose(X: AlgebraElement) -> Tuple[AlgebraElement, AlgebraElement]:
    """Split X into its theta-fixed (antisymmetric) and theta-antifixed (symmetric) parts."""
    thX = cartan_involution(X)
    k_part = AlgebraElement((X.entries + thX.entries) / 2, X.algebra_tag)
    p_part = AlgebraElement(X.entries - k_part.entries, X.algebra_tag)
    return k_part, p_part


def elementary(n: int, i: int, j: int, tag: str = None) -> AlgebraElement:
    E = np.zeros((n, n))
    E[i, j] = 1.0
    return AlgebraElement(E, tag or f'sl{n}r')


def sl_basis(n: int) -> List[AlgebraElement]:
    """Standard basis: H_k = E_kk - E_(k+1)(k+1), then E_ij above and below the diagonal."""
    tag = f'sl{n}r'
    basis = []
    for k in range(n - 1):
        H = np.zeros((n, n))
        H[k, k], H[k + 1, k + 1] = 1.0, -1.0
        basis.append(AlgebraElement(H, tag))
    basis += [elementary(n, i, j) for i in range(n) for j in range(i + 1, n)]
    basis += [elementary(n, i, j) for i in range(n) for j in range(i)]
    return basis


def cartan_subalgebra_basis(n: int) -> List[AlgebraElement]:
    """Trace-form orthonormal basis of the traceless diagonal: h_k ~ diag(1,..,1,-k,0,..)."""
    tag = f'sl{n}r'
    basis = []
    for k in range(1, n):
        d = np.zeros(n)
        d[:k] = 1.0
        d[k] = -float(k)
        basis.append(AlgebraElement(np.diag(d / np.sqrt(k * (k + 1))), tag))
    return basis


@dataclass
class RootDatum:
    algebra_tag: str
    cartan_basis: List[AlgebraElement]
    roots: np.ndarray  # (n_roots, rank); row = root evaluated on cartan_basis
    labels: List[Tuple[int, int]]  # root e_i - e_j stored as (i, j)
    root_spaces: List[List[AlgebraElement]]
    positive: List[int]
    simple: List[int]
    grading: Dict[int, List[int]] = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return len(self.cartan_basis)

    @property
    def step(self) -> int:
        return max(self.grading) if self.grading else 0

    def index(self, label: Tuple[int, int]) -> int:
        return self.labels.index(tuple(label))

    def stratum(self, root: int) -> int:
        for i, members in self.grading.items():
            if root in members:
                return i
        raise KeyError(f'Root {self.labels[root]} is not positive')

    def root_sum(self, r1: int, r2: int):
        """Index of the root r1 + r2, or None when the sum is not a root."""
        target = self.roots[r1] + self.roots[r2]
        for k, row in enumerate(self.roots):
            if np.allclose(row, target, atol=settings.lie_residual_tol):
                return k
        return None

    def exponents(self, scale: float = np.sqrt(2)) -> np.ndarray:
        """Exponent vectors of the positive roots as characters on flat coordinates."""
        return scale * self.roots[self.positive]

    def summary(self) -> dict:
        return {
            'algebra_tag': self.algebra_tag,
            'rank': self.rank,
            'positive_roots': [f'e{i + 1}-e{j + 1}' for i, j in (self.labels[r] for r in self.positive)],
            'simple_roots': [f'e{i + 1}-e{j + 1}' for i, j in (self.labels[r] for r in self.simple)],
            'grading': {str(i): [f'e{self.labels[r][0] + 1}-e{self.labels[r][1] + 1}' for r in members]
                        for i, members in sorted(self.grading.items())},
            'step': self.step,
        }


def _check_root_spaces(datum: RootDatum) -> None:
    tol = settings.lie_residual_tol
    for r, space in enumerate(datum.root_spaces):
        for X in space:
            for j, h in enumerate(datum.cartan_basis):
                residual = np.abs(bracket(h, X).entries - datum.roots[r, j] * X.entries).max()
                if residual > tol:
                    raise DegenerateInputError(
                        f'Root space of {datum.labels[r]} is not an ad-eigenspace (residual {residual:.3g})')
    for r1, r2 in itertools.product(range(len(datum.labels)), repeat=2):
        target = datum.root_sum(r1, r2)
        for X, Y in itertools.product(datum.root_spaces[r1], datum.root_spaces[r2]):
            Z = bracket(X, Y).entries
            if target is None:
                if np.abs(Z).max() > tol and not np.allclose(datum.roots[r1], -datum.roots[r2]):
                    raise DegenerateInputError(f'[g_{datum.labels[r1]}, g_{datum.labels[r2]}] leaves the root spaces')
                continue
            span = np.stack([S.entries.ravel() for S in datum.root_spaces[target]], axis=1)
            coef, *_ = np.linalg.lstsq(span, Z.ravel(), rcond=None)
            if np.abs(span @ coef - Z.ravel()).max() > tol:
                raise DegenerateInputError(
                    f'[g_{datum.labels[r1]}, g_{datum.labels[r2]}] is not inside g_{datum.labels[target]}')


def restricted_roots(algebra_tag: str) -> RootDatum:
    n = sl_rank(algebra_tag)
    cartan = cartan_subalgebra_basis(n)
    diag = np.stack([np.diag(h.entries) for h in cartan], axis=1)  # (n, rank)
    labels = [(i, j) for i in range(n) for j in range(n) if i != j]
    roots = np.array([diag[i] - diag[j] for i, j in labels])
    spaces = [[elementary(n, i, j, algebra_tag)] for i, j in labels]
    positive = [k for k, (i, j) in enumerate(labels) if i < j]
    simple = [k for k, (i, j) in enumerate(labels) if j == i + 1]
    grading: Dict[int, List[int]] = {}
    for k in positive:
        i, j = labels[k]
        grading.setdefault(j - i, []).append(k)
    datum = RootDatum(algebra_tag, cartan, roots, labels, spaces, positive, simple, grading)
    _check_root_spaces(datum)
    logger.debug(f'{algebra_tag}: {len(positive)} positive roots, step {datum.step}')
    return datum


def lower_central_series(basis: Sequence[AlgebraElement]) -> Tuple[List[int], int]:
    """Dimensions of g_1 = span(basis), g_(k+1) = [g_1, g_k] and the nilpotency step.

    Raises DegenerateInputError when the series stalls above zero (not nilpotent).
    """
    tol = settings.lie_residual_tol

    def span_of(mats):
        if not mats:
            return np.zeros((0, 0))
        stacked = np.stack([m.ravel() for m in mats], axis=0)
        u, s, vt = np.linalg.svd(stacked, full_matrices=False)
        return vt[s > tol * max(1.0, s.max(initial=0.0))]

    first = span_of([b.entries for b in basis])
    n = basis[0].dim
    dims, current = [], first
    while current.shape[0] > 0:
        dims.append(current.shape[0])
        if len(dims) > n * n:
            raise DegenerateInputError('Lower central series does not terminate; the algebra is not nilpotent')
        products = [x.reshape(n, n) @ y.reshape(n, n) - y.reshape(n, n) @ x.reshape(n, n)
                    for x in first for y in current]
        nxt = span_of(products)
        if nxt.shape[0] == current.shape[0]:
            raise DegenerateInputError('Lower central series stalls; the algebra is not nilpotent')
        current = nxt
    return dims, len(dims)


@dataclass(frozen=True)
class IwasawaFactors:
    k: GroupElement
    a: GroupElement
    n: GroupElement

    def product(self) -> np.ndarray:
        return self.k.entries @ self.a.entries @ self.n.entries

    def flat_coordinates(self) -> np.ndarray:
        """log(a) in the orthonormal basis of the flat subalgebra."""
        dim = self.a.entries.shape[0]
        logs = np.log(np.diag(self.a.entries))
        return np.array([np.dot(np.diag(h.entries), logs) for h in cartan_subalgebra_basis(dim)])


def iwasawa_decompose(g) -> IwasawaFactors:
    """Factor g = k a n with k in SO(n), a positive diagonal and n unit upper triangular.

    Computed by QR with the sign of the triangular factor normalized to a positive diagonal.
    """
    if not isinstance(g, GroupElement):
        g = GroupElement(np.asarray(g, dtype=float), f'sl{np.shape(g)[0]}r')
    mat = g.entries
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond > settings.lie_cond_limit:
        raise SingularMatrixError(f'Condition number {cond:.3g} exceeds {settings.lie_cond_limit:.3g}')
    q, r = qr(mat)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    r = signs[:, None] * r
    diag = np.diag(r)
    n_part = np.triu(r / diag[:, None])
    np.fill_diagonal(n_part, 1.0)
    tag = g.group_tag
    return IwasawaFactors(GroupElement(q, tag), GroupElement(np.diag(diag), tag), GroupElement(n_part, tag))


def exp_matrix(X: AlgebraElement) -> GroupElement:
    return GroupElement(expm(X.entries), X.algebra_tag)


def log_unipotent(n) -> AlgebraElement:
    """Logarithm of a unit upper triangular matrix through the finite series."""
    if isinstance(n, GroupElement):
        mat, tag = n.entries, n.group_tag
    else:
        mat = np.asarray(n, dtype=float)
        tag = f'sl{mat.shape[0]}r'
    dim = mat.shape[0]
    nil = mat - np.eye(dim)
    if np.abs(np.tril(nil)).max() > settings.lie_tol:
        raise NotUnipotentError('log_unipotent needs a unit upper triangular matrix')
    nil = np.triu(nil, 1)
    out = np.zeros_like(nil)
    power = np.eye(dim)
    for k in range(1, dim):
        power = power @ nil
        out += (-1) ** (k + 1) * power / k
    return AlgebraElement(out, tag)


def random_sl(n: int, rng: np.random.Generator) -> GroupElement:
    """Entries uniform in [-2, 2], renormalized to determinant 1."""
    while True:
        mat = rng.uniform(-2.0, 2.0, size=(n, n))
        det = np.linalg.det(mat)
        if abs(det) > 1e-2:
            break
    if det < 0:
        mat[0] *= -1
    mat /= abs(det) ** (1.0 / n)
    return GroupElement(mat, f'sl{n}r')
