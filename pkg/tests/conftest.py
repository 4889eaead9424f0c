"""Shared fixtures.

Gallery models are session-scoped: derived symbolic pipelines are cached on
the model instances, so reusing one object across tests avoids rebuilding
them per test.
"""

import pytest

from finslerlab import modelfile


@pytest.fixture(scope="session")
def gallery():
    return {name: modelfile.load_gallery(name) for name in modelfile.GALLERY}


@pytest.fixture(scope="session")
def flat(gallery):
    return gallery["flat"]


@pytest.fixture(scope="session")
def sphere(gallery):
    return gallery["sphere"]


@pytest.fixture(scope="session")
def hyperbolic(gallery):
    return gallery["hyperbolic"]


@pytest.fixture(scope="session")
def quartic_minkowski(gallery):
    return gallery["quartic_minkowski"]


@pytest.fixture(scope="session")
def quartic_product(gallery):
    return gallery["quartic_product"]


@pytest.fixture(scope="session")
def randers(gallery):
    return gallery["randers"]


@pytest.fixture(scope="session")
def riemannian_product(gallery):
    return gallery["riemannian_product"]
