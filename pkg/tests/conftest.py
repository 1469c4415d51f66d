import numpy as np
import pytest

import utils
import carnot
import models
import netaction


@pytest.fixture(autouse=True)
def default_settings():
    utils.overwrite_settings()
    yield
    # CLI runs rebind the sink to the runner's stream
    utils.setup_logger()
    utils.overwrite_settings()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope='session')
def h3_window():
    """Default h3 window: 5 leaves x 25 points of the Z^2 ball of radius 3."""
    utils.overwrite_settings()
    bundle = models.get_model('h3')
    return netaction.build_net(bundle.lattice, bundle.metric, (-2, 2), 3)


@pytest.fixture(scope='session')
def sl3r_window():
    """Small Heisenberg net: leaves {0, 1}^2, lattice rescaled by 3, word radius 1."""
    utils.overwrite_settings()
    bundle = models.get_model('sl3r')
    spec = carnot.rescale_lattice(bundle.lattice, bundle.default_rescale, bundle.metric.base_metric())
    return netaction.build_net(spec, bundle.metric, (0, 1), 1)
