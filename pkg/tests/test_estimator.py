import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sturm_attractor import SturmAttractor, as_problem
from sturm_attractor.errors import ValidationError
from sturm_attractor.verify import grid

from conftest import fitted_ci


def test_params_round_trip():
    model = SturmAttractor(scan=1024, t_end=50.0)
    params = model.get_params()
    assert params["scan"] == 1024 and params["t_end"] == 50.0
    other = clone(model).set_params(grid=501)
    assert other.grid == 501 and other.scan == 1024
    assert "scan=1024" in repr(model)


def test_fit_from_mapping():
    model = SturmAttractor(scan=1024).fit({"a": "1", "f": "lambda*u*(1-u^2)", "lambda": 2.0})
    assert model.problem_.scan == 1024
    assert model.permutation_.as_list() == [1, 4, 3, 2, 5]
    assert model.window_ == (-4.0, 4.0)


def test_mapping_validation():
    with pytest.raises(ValidationError):
        as_problem({"a": "1"})
    with pytest.raises(TypeError):
        as_problem(3)


def test_explicit_window():
    model = SturmAttractor(window=(-2, 2)).fit_equilibria({"a": "1", "f": "2*u*(1-u^2)"})
    assert model.window_ == (-2.0, 2.0) and len(model.equilibria_) == 5


def test_not_fitted():
    with pytest.raises(NotFittedError):
        SturmAttractor().predict(np.zeros((1, 101)))


def test_predict_and_transform(ci2):
    x = grid(101)
    U0 = np.array([np.full(101, 0.01), np.full(101, -0.01), 0.5 * np.cos(5 * x)])
    labels = ci2.predict(U0)
    assert labels[0] == 5 and labels[1] == 1
    Z = ci2.transform(U0)
    assert Z.shape == (3, 5)
    assert Z[0, 2] == 0  # constant 0.01 lies above u = 0
    assert Z[2, 2] == 5
    with pytest.raises(ValueError):
        ci2.predict(np.zeros((1, 50)))


def test_verify_small_case():
    model = fitted_ci(0.5)
    result = model.verify(k=2)
    assert result["contradictions"] == []
    assert {(v.source, v.target) for v in result["edges"] if v.confirmed} == {(2, 1), (2, 3)}
