import pytest

import models
from errors import ConfigError


def test_registered_models():
    assert set(models.REGISTERED_MODELS) == {'sl2r', 'sl3r', 'h2', 'h3'}


@pytest.mark.parametrize('tag, rank, dim', [('sl2r', 1, 1), ('sl3r', 2, 3), ('h2', 1, 1), ('h3', 1, 2)])
def test_model_shapes(tag, rank, dim):
    bundle = models.get_model(tag)
    assert bundle.tag == tag
    assert bundle.rank == rank
    assert bundle.algebra.dim == dim
    assert bundle.lattice.algebra is bundle.algebra


def test_sl3r_is_heisenberg():
    bundle = models.get_model('sl3r')
    assert bundle.algebra.name == 'heisenberg'
    assert bundle.algebra_tag == 'sl3r'
    assert bundle.default_rescale == 3.0


def test_hyperbolic_models_are_closed_form():
    assert models.get_model('h3').metric.closed_form
    assert models.get_model('sl2r').metric.closed_form
    assert not models.get_model('sl3r').metric.closed_form


def test_get_model_caches():
    assert models.get_model('h2') is models.get_model('h2')


def test_unknown_model():
    with pytest.raises(ConfigError, match='registered models'):
        models.get_model('sl9q')
