import pytest

from linconj.certificate import certify
from linconj.system import builtin_scenario


@pytest.fixture(scope="session")
def exm_discrete():
    return builtin_scenario("exm-discrete")


@pytest.fixture(scope="session")
def exm_discrete_cert(exm_discrete):
    return certify(exm_discrete)


@pytest.fixture(scope="session")
def exm_continuous():
    return builtin_scenario("exm-continuous")


@pytest.fixture(scope="session")
def exm_continuous_cert(exm_continuous):
    return certify(exm_continuous)


@pytest.fixture(scope="session")
def scalar_oracle():
    return builtin_scenario("scalar-oracle")


@pytest.fixture(scope="session")
def scalar_oracle_cert(scalar_oracle):
    return certify(scalar_oracle)


@pytest.fixture(scope="session")
def identity_null():
    return builtin_scenario("identity-null")


@pytest.fixture(scope="session")
def identity_null_cert(identity_null):
    return certify(identity_null)


@pytest.fixture(scope="session")
def center_free(exm_discrete):
    """exm-discrete with the center forcing removed (f3 set to zero)."""
    return exm_discrete.with_config(
        lambda cfg: cfg["system"]["perturbation"].__setitem__(
            2, {"component": 3, "family": "zero"}))


@pytest.fixture(scope="session")
def center_free_cert(center_free):
    return certify(center_free)


@pytest.fixture(scope="session")
def cycled_sources(exm_discrete):
    """exm-discrete with component 1 sourcing coordinate 5, closing a 1-5
    feedback cycle so Picard converges geometrically instead of exactly."""
    return exm_discrete.with_config(
        lambda cfg: cfg["system"]["perturbation"][0].__setitem__("source", 5))


@pytest.fixture(scope="session")
def cycled_sources_cert(cycled_sources):
    return certify(cycled_sources)
