import numpy as np
import pytest

from distcomp.core.validation import InvalidInput
from distcomp.games.functions import FunctionCatalog, build_bivariate, build_function


@pytest.fixture
def catalog():
    return FunctionCatalog()


def test_catalog_loads_forms(catalog):
    assert set(catalog.catalog["forms"]) == {"power", "affine", "exp_decay", "tabulated"}
    assert set(catalog.catalog["bivariate"]) == {"sum", "product", "tail"}


def test_power_and_affine():
    power = build_function({"form": "power", "a": 2.0, "p": 0.5})
    assert power(0.25) == pytest.approx(1.0)
    affine = build_function({"form": "affine", "a": 1.0, "b": -0.5})
    assert np.allclose(affine(np.array([0.0, 1.0])), [1.0, 0.5])


def test_defaults_fill_missing_parameters():
    assert build_function({"form": "exp_decay"})(0.0) == pytest.approx(1.0)
    assert build_function({"form": "affine"})(0.3) == pytest.approx(0.3)


def test_unexpected_parameter_is_rejected():
    with pytest.raises(InvalidInput):
        build_function({"form": "power", "a": 1.0, "r": 2.0})


def test_tabulated_is_monotone_and_clamped():
    f = build_function({"form": "tabulated", "knots": [0.0, 0.5, 1.0], "values": [0.0, 0.8, 1.0]})
    xs = np.linspace(0.0, 1.0, 101)
    assert np.all(np.diff(f(xs)) >= -1e-12)
    assert f(1.5) == pytest.approx(1.0)
    assert f(-0.5) == pytest.approx(0.0)


def test_tabulated_needs_increasing_knots():
    with pytest.raises(InvalidInput):
        build_function({"form": "tabulated", "knots": [0.0, 0.0, 1.0], "values": [0.0, 0.5, 1.0]})


def test_bivariate_forms_broadcast():
    kappa = build_bivariate({
        "form": "product",
        "f": {"form": "power", "a": 1.0, "p": 1.0},
        "g": {"form": "affine", "a": 1.0, "b": 1.0},
    })
    X, Q = np.meshgrid([0.0, 0.5, 1.0], [0.0, 1.0], indexing="ij")
    assert kappa(X, Q).shape == (3, 2)
    assert kappa(0.5, 1.0) == pytest.approx(1.0)

    tail = build_bivariate({
        "form": "tail",
        "h": {"form": "exp_decay", "a": 2.0, "r": 1.0},
        "g": {"form": "affine", "a": 1.0, "b": 0.0},
        "base": 0.25,
    })
    assert tail(0.0, 0.3) == pytest.approx(2.25)


def test_bivariate_requires_its_parts():
    with pytest.raises(ValueError):
        build_bivariate({"form": "sum", "g": {"form": "affine"}})
