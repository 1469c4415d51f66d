# Registry of the homogeneous-space models the toolkit knows about.

from dataclasses import dataclass
from typing import Dict, Optional
import liecore
from carnot import CarnotAlgebra, LatticeSpec
from symspace import WarpedMetric
from errors import ConfigError


@dataclass(frozen=True)
class Model:
    tag: str
    description: str
    metric: WarpedMetric
    lattice: LatticeSpec
    default_rescale: float = 1.0
    algebra_tag: Optional[str] = None  # lie-core tag when the model comes from sl(n, R)

    @property
    def rank(self) -> int:
        return self.metric.rank

    @property
    def algebra(self) -> CarnotAlgebra:
        return self.metric.algebra


def _split(tag: str, rescale: float) -> Model:
    datum = liecore.restricted_roots(tag)
    algebra = CarnotAlgebra.from_root_datum(datum)
    if algebra.step == 2:
        algebra = CarnotAlgebra(algebra.strata_dims, algebra.structure_constants, 'heisenberg',
                                algebra.labels, algebra.matrices)
    metric = WarpedMetric.from_root_datum(datum, algebra)
    n = liecore.sl_rank(tag)
    return Model(tag, f'SL({n},R)/SO({n}) in horocyclic coordinates', metric,
                 LatticeSpec.integer(algebra, f'integer {algebra.name}'), rescale, tag)


def _hyperbolic(dim: int) -> Model:
    metric = WarpedMetric.hyperbolic(dim)
    return Model(f'h{dim}', f'real hyperbolic space H^{dim} (upper half-space, z = e^-a)', metric,
                 LatticeSpec.integer(metric.algebra, f'Z^{dim - 1}'))


_builders = {
    'sl2r': lambda: _split('sl2r', 1.0),
    'sl3r': lambda: _split('sl3r', 3.0),
    'h2': lambda: _hyperbolic(2),
    'h3': lambda: _hyperbolic(3),
}
REGISTERED_MODELS = tuple(_builders)
_cache: Dict[str, Model] = {}


def get_model(tag: str) -> Model:
    if tag not in _builders:
        raise ConfigError(f'Unknown model {tag!r}; registered models: {", ".join(REGISTERED_MODELS)}')
    if tag not in _cache:
        _cache[tag] = _builders[tag]()
    return _cache[tag]
