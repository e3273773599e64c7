import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepfactor.baseline import LinearModel, linear_predict, ols_fit
from deepfactor.errors import DimensionMismatchError, EmptyInputError, SingularDesignError
from deepfactor.lrp import relevance
from deepfactor.net import forward

from oracles import qr_least_squares


def standardized(rng, n, p):
    X = rng.normal(size=(n, p))
    return (X - X.mean(axis=0)) / X.std(axis=0, ddof=1)


def test_exact_linear_data():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 80))
    y = 2 * X[:, 0] - X[:, 1]
    model = ols_fit(X, y)
    expected = np.zeros(80)
    expected[:2] = [2, -1]
    np.testing.assert_allclose(model.coefficients, expected, atol=1e-10)
    assert abs(model.intercept) < 1e-10


def test_constant_target():
    rng = np.random.default_rng(1)
    model = ols_fit(standardized(rng, 150, 10), np.full(150, 0.37))
    assert model.intercept == pytest.approx(0.37, abs=1e-12)
    np.testing.assert_allclose(model.coefficients, 0, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_matches_qr_oracle(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(100, 80))
    y = X @ rng.normal(size=80) + rng.normal(size=100) + 0.5
    model = ols_fit(X, y)
    a, b = qr_least_squares(X, y)
    np.testing.assert_allclose(model.coefficients, b, rtol=1e-8, atol=1e-10)
    assert model.intercept == pytest.approx(a, rel=1e-8)


def test_residuals_orthogonal_and_centred():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(500, 12))
    y = rng.normal(size=500)
    model = ols_fit(X, y)
    resid = y - linear_predict(model, X)
    assert abs(resid.sum()) < 1e-8
    np.testing.assert_allclose(X.T @ resid, 0, atol=1e-8)


def test_ridge_path_converges_to_ols():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(120, 6))
    y = X @ rng.normal(size=6) + 0.1 * rng.normal(size=120)
    ols = ols_fit(X, y).coefficients
    gaps = [np.abs(ols_fit(X, y, lam).coefficients - ols).max() for lam in (1.0, 1e-2, 1e-4, 1e-6)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-6


def test_singular_design_suggests_ridge():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(50, 3))
    X = np.column_stack([X, X[:, 0] + X[:, 1]])
    with pytest.raises(SingularDesignError, match="ridge_lambda"):
        ols_fit(X, rng.normal(size=50))
    model = ols_fit(X, rng.normal(size=50), ridge_lambda=1e-3)
    assert np.all(np.isfinite(model.coefficients))


def test_more_columns_than_rows_is_singular():
    rng = np.random.default_rng(6)
    with pytest.raises(SingularDesignError):
        ols_fit(rng.normal(size=(10, 80)), rng.normal(size=10))


@pytest.mark.parametrize("X,y,err", [
    (np.empty((0, 3)), np.empty(0), EmptyInputError),
    (np.ones((1, 3)), np.ones(1), EmptyInputError),
    (np.ones((4, 3)), np.ones(5), DimensionMismatchError),
])
def test_input_errors(X, y, err):
    with pytest.raises(err):
        ols_fit(X, y)


class TestPredict:
    def test_zero_model(self):
        assert linear_predict(LinearModel(0.0, np.zeros(80)), np.arange(80.0)) == 0.0

    def test_intercept_plus_unit(self):
        coef = np.zeros(80)
        coef[0] = 1.0
        x = np.zeros(80)
        x[0] = 3.0
        assert linear_predict(LinearModel(1.0, coef), x) == 4.0

    def test_fitted_model_on_training_point(self):
        rng = np.random.default_rng(7)
        X, y = rng.normal(size=(60, 5)), rng.normal(size=60)
        model = ols_fit(X, y)
        expected = model.intercept + sum(c * v for c, v in zip(model.coefficients, X[4]))
        assert linear_predict(model, X[4]) == pytest.approx(expected, rel=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            linear_predict(LinearModel(0.0, np.zeros(3)), np.zeros(4))

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-2, 2), st.integers(0, 2**31))
    def test_affine(self, a, seed):
        rng = np.random.default_rng(seed)
        model = LinearModel(rng.normal(), rng.normal(size=8))
        x, z = rng.normal(size=8), rng.normal(size=8)
        lhs = linear_predict(model, a * x + (1 - a) * z)
        rhs = a * linear_predict(model, x) + (1 - a) * linear_predict(model, z)
        assert lhs == pytest.approx(rhs, abs=1e-10)


def test_json_round_trip(tmp_path):
    model = LinearModel(0.25, np.random.default_rng(8).normal(size=80))
    model.save(tmp_path / "m.json")
    back = LinearModel.load(tmp_path / "m.json")
    assert back.intercept == model.intercept
    np.testing.assert_array_equal(back.coefficients, model.coefficients)


def test_as_network_matches_and_explains():
    rng = np.random.default_rng(9)
    model = LinearModel(0.0, rng.normal(size=80))
    x = rng.normal(size=80)
    net = model.as_network()
    trace = forward(net, x)
    assert trace.output == pytest.approx(linear_predict(model, x), abs=1e-14)
    np.testing.assert_allclose(relevance(net, trace, stabilizer=0.0).per_input,
                               model.coefficients * x, atol=1e-12)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        LinearModel(np.nan, np.zeros(2))
    with pytest.raises(ValueError):
        ols_fit(np.array([[1.0], [np.inf]]), np.ones(2))
