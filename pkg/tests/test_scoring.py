from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import logsumexp
from scipy.stats import norm

from stanloop.errors import InvalidInputError
from stanloop.scoring import (
    DegeneratePredictiveWarning,
    LogLikMatrix,
    OracleRegressionParams,
    dgp_mean,
    dgp_sigma,
    gaussian_nll,
    nlpd,
    nlpd_from_cdf,
    oracle_nlpd_gaussian,
    pointwise_lpd,
)

matrices = arrays(
    np.float64,
    st.tuples(st.integers(1, 12), st.integers(1, 6)),
    elements=st.floats(-50.0, 0.0, allow_nan=False),
)


def test_two_draw_example():
    # mean density 0.4 at one point
    assert nlpd(np.log([[0.2], [0.6]])) == pytest.approx(-math.log(0.4), abs=1e-15)


def test_constant_matrix_is_exact():
    assert nlpd(np.full((2, 1), -1000.0)) == 1000.0
    assert nlpd(np.full((3000, 7), -2.5)) == 2.5


def test_single_row_is_plain_average():
    ll = np.array([-0.5, -1.5, -2.0])
    assert nlpd(ll) == pytest.approx(4.0 / 3.0)


@settings(max_examples=300)
@given(matrices)
def test_matches_scipy_logsumexp(ll):
    expected = -np.mean(logsumexp(ll, axis=0) - math.log(ll.shape[0]))
    assert nlpd(ll) == pytest.approx(expected, rel=1e-12, abs=1e-12)


@settings(max_examples=200)
@given(matrices, st.floats(-100.0, 100.0))
def test_shift_equivariance(ll, c):
    assert nlpd(ll + c) == pytest.approx(nlpd(ll) - c, rel=1e-9, abs=1e-9)


@settings(max_examples=200)
@given(matrices, st.randoms(use_true_random=False))
def test_draw_order_invariance(ll, rnd):
    perm = list(range(ll.shape[0]))
    rnd.shuffle(perm)
    assert nlpd(ll[perm]) == pytest.approx(nlpd(ll), rel=1e-12, abs=1e-12)


@settings(max_examples=200)
@given(matrices)
def test_jensen_bounds(ll):
    # the mixture density lies between the worst and best single draw, and above the geometric mean
    lpd = pointwise_lpd(ll)
    assert np.all(lpd <= ll.max(axis=0) + 1e-12)
    assert np.all(lpd >= ll.mean(axis=0) - 1e-12)


def test_neg_inf_entries_are_allowed():
    ll = np.array([[-np.inf, -1.0], [-2.0, -np.inf]])
    expected = -np.mean([math.log(0.5 * math.exp(-2.0)), math.log(0.5 * math.exp(-1.0))])
    assert nlpd(ll) == pytest.approx(expected)


def test_dead_column_gives_inf_with_warning():
    ll = np.array([[-1.0, -np.inf], [-2.0, -np.inf]])
    with pytest.warns(DegeneratePredictiveWarning) as rec:
        assert nlpd(ll) == math.inf
    assert rec[0].message.columns == (1,)


@pytest.mark.parametrize("bad, where", [(np.nan, "draw 1, test point 2"), (np.inf, "draw 1, test point 2")])
def test_rejects_nan_and_pos_inf(bad, where):
    ll = np.zeros((3, 4))
    ll[1, 2] = bad
    with pytest.raises(InvalidInputError, match=where):
        LogLikMatrix(ll)


def test_rejects_empty():
    with pytest.raises(InvalidInputError):
        LogLikMatrix(np.zeros((0, 3)))
    with pytest.raises(InvalidInputError):
        LogLikMatrix(np.zeros((2, 2, 2)))


def test_matrix_is_immutable_copy():
    src = np.zeros((2, 2))
    m = LogLikMatrix(src)
    src[0, 0] = 5.0
    assert m.values[0, 0] == 0.0
    with pytest.raises(ValueError):
        m.values[0, 0] = 1.0


def test_from_columns_orders_numerically():
    cols = {"log_lik.10": np.full(2, -10.0), "mu": np.zeros(2)}
    cols.update({f"log_lik.{i}": np.full(2, -float(i)) for i in range(1, 10)})
    m = LogLikMatrix.from_columns(cols)
    assert m.values[0].tolist() == [-float(i) for i in range(1, 11)]


def test_from_columns_requires_contiguous():
    with pytest.raises(InvalidInputError, match="contiguous"):
        LogLikMatrix.from_columns({"log_lik.1": [0.0], "log_lik.3": [0.0]})
    with pytest.raises(InvalidInputError, match="no 'log_lik"):
        LogLikMatrix.from_columns({"mu": [0.0]})


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    m = LogLikMatrix(rng.normal(-3, 1, (50, 7)))
    back = LogLikMatrix.from_csv(m.to_csv(tmp_path / "ll.csv"))
    assert np.array_equal(back.values, m.values)


def test_gaussian_oracle_against_scipy():
    rng = np.random.default_rng(1)
    y, mu, sd = rng.normal(size=20), rng.normal(size=20), rng.uniform(0.1, 3, 20)
    assert oracle_nlpd_gaussian(y, mu, sd) == pytest.approx(-norm.logpdf(y, mu, sd).mean(), rel=1e-13)
    assert gaussian_nll(0.0, 0.0, 1.0) == pytest.approx(0.5 * math.log(2 * math.pi))


def test_gaussian_oracle_validation():
    with pytest.raises(InvalidInputError):
        oracle_nlpd_gaussian([1.0], [0.0], [0.0])
    with pytest.raises(InvalidInputError):
        oracle_nlpd_gaussian([1.0, 2.0], [0.0], [1.0])


def test_dgp_curves():
    assert dgp_mean(0.0) == 0.0
    assert dgp_mean(1.0) == pytest.approx(2 * math.sin(1.2) + 0.3)
    assert dgp_sigma(3.0) == pytest.approx(1.1)
    assert dgp_sigma(100.0) == pytest.approx(0.3)
    assert isinstance(dgp_mean(2.0), float)
    assert dgp_mean(np.array([0.0, 1.0])).shape == (2,)


def test_oracle_params_validation():
    with pytest.raises(InvalidInputError):
        OracleRegressionParams(bump_width=0.0)
    with pytest.raises(InvalidInputError):
        OracleRegressionParams(sigma_base=-1.0)


def test_cdf_finite_difference_errors():
    with pytest.raises(InvalidInputError, match="delta"):
        nlpd_from_cdf(norm.cdf, [0.0], delta=0.0)
    with pytest.raises(InvalidInputError, match="point 1"):
        nlpd_from_cdf(lambda t: np.where(t > 50, 1.0, norm.cdf(t)), [0.0, 60.0])


def test_cdf_finite_difference_accepts_vectorized_scalar_cdf():
    cdf = np.vectorize(lambda t: 0.5 * (1 + math.erf(t / math.sqrt(2))))
    y = np.linspace(-2, 2, 11)
    assert nlpd_from_cdf(cdf, y) == pytest.approx(-norm.logpdf(y).mean(), abs=1e-3)
