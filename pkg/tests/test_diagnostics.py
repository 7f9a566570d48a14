from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stanloop.diagnostics import (
    ChainDraws,
    DiagnosticsReport,
    HealthThresholds,
    divergence_count,
    ess,
    is_model_parameter,
    split_rhat,
    summarize,
)
from stanloop.errors import InvalidInputError


def _draws(x, divergent=None):
    return ChainDraws.from_arrays({"x": np.asarray(x, dtype=float)}, divergent)


def _reference_rhat(x: np.ndarray) -> float:
    # straightforward loop version of the classic split R-hat
    m, d = x.shape
    half = d // 2
    seqs = []
    for c in range(m):
        seqs.append(x[c, :half])
        seqs.append(x[c, d - half:])
    n = half
    means = np.array([s.mean() for s in seqs])
    variances = np.array([s.var(ddof=1) for s in seqs])
    w = variances.mean()
    b = n * means.var(ddof=1)
    return math.sqrt(((n - 1) / n * w + b / n) / w)


def test_constant_chains_are_degenerate():
    d = _draws(np.full((2, 100), 5.0))
    assert split_rhat(d, "x") == 1.0
    assert ess(d, "x") == 1.0
    report = summarize(d)
    assert report.per_param["x"].degenerate


def test_matches_reference_rhat():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 101)) + np.array([[0.0], [0.3], [-0.2]])
    assert split_rhat(_draws(x), "x") == pytest.approx(_reference_rhat(x), rel=1e-12)


def test_iid_ess_near_total():
    rng = np.random.default_rng(2)
    value = ess(_draws(rng.standard_normal((2, 5000))), "x")
    assert abs(value / 10_000 - 1) <= 0.2


def test_split_detects_within_chain_drift():
    # each chain drifts from 0 to 5: splitting exposes it even though chain means agree
    trend = np.linspace(0, 5, 2000)
    rng = np.random.default_rng(0)
    x = trend + 0.1 * rng.standard_normal((2, 2000))
    assert split_rhat(_draws(x), "x") > 1.5


def test_zero_within_variance_with_between_variance_is_inf():
    x = np.vstack([np.zeros(10), np.ones(10)])
    assert split_rhat(_draws(x), "x") == math.inf


def test_too_few_draws():
    with pytest.raises(InvalidInputError, match="at least 4"):
        split_rhat(_draws(np.zeros((2, 3))), "x")


def test_unknown_param():
    with pytest.raises(InvalidInputError, match="unknown parameter"):
        split_rhat(_draws(np.zeros((2, 8))), "y")


@pytest.mark.parametrize(
    "flags, count",
    [([[0, 0, 1, 0, 1]], 2), ([[0, 0, 0, 0, 0]], 0), ([[1, 0, 0, 0, 0], [0, 1, 0, 0, 0]], 2)],
)
def test_divergence_count(flags, count):
    flags = np.asarray(flags)
    assert divergence_count(_draws(np.zeros(flags.shape), flags)) == count


def test_chain_validation():
    with pytest.raises(InvalidInputError):
        ChainDraws(("a",), (np.zeros((5, 1)), np.zeros((6, 1))), (np.zeros(5), np.zeros(6)))
    with pytest.raises(InvalidInputError):
        ChainDraws(("a", "a"), (np.zeros((5, 2)),), (np.zeros(5),))
    with pytest.raises(InvalidInputError):
        ChainDraws(("a",), (np.zeros((5, 1)),), (np.zeros(4),))
    with pytest.raises(InvalidInputError):
        ChainDraws((), (), ())


def test_from_chain_tables_uses_divergent_column():
    t1 = {"lp__": np.arange(5.0), "divergent__": np.array([0, 1, 0, 0, 0.0]), "mu": np.arange(5.0)}
    t2 = {"lp__": np.arange(5.0), "divergent__": np.zeros(5), "mu": np.arange(5.0) + 1}
    d = ChainDraws.from_chain_tables([t1, t2])
    assert d.param_names == ("lp__", "mu")
    assert divergence_count(d) == 1
    with pytest.raises(InvalidInputError, match="different columns"):
        ChainDraws.from_chain_tables([t1, {"lp__": np.arange(5.0), "divergent__": np.zeros(5)}])


def test_is_model_parameter():
    assert is_model_parameter("mu")
    assert is_model_parameter("theta.3")
    assert not is_model_parameter("lp__")
    assert not is_model_parameter("log_lik.4")


def test_summary_health_levels():
    rng = np.random.default_rng(8)
    good = rng.standard_normal((2, 2000))
    assert summarize(_draws(good)).health == "ok"

    flags = np.zeros((2, 2000), dtype=bool)
    flags[0, :3] = True
    report = summarize(_draws(good, flags))
    assert report.health == "warn" and report.divergences == 3

    flags[:, :11] = True  # 22 > 0.5% of 4000
    assert summarize(_draws(good, flags)).health == "fail"

    split = np.stack([rng.normal(0, 1, 2000), rng.normal(5, 1, 2000)])
    assert summarize(_draws(split)).health == "fail"


def test_summary_excludes_internal_columns():
    rng = np.random.default_rng(1)
    d = ChainDraws.from_arrays({
        "mu": rng.standard_normal((2, 100)),
        "lp__": np.zeros((2, 100)) + np.arange(2)[:, None],
        "log_lik.1": rng.standard_normal((2, 100)),
    })
    assert set(summarize(d).per_param) == {"mu"}


def test_summary_max_rhat_is_max_over_params():
    rng = np.random.default_rng(3)
    d = ChainDraws.from_arrays({"a": rng.standard_normal((4, 200)), "b": rng.standard_normal((4, 200)) * 3})
    r = summarize(d)
    assert r.max_rhat == max(p.rhat for p in r.per_param.values())
    assert r.min_ess == min(p.ess for p in r.per_param.values())


def test_constant_param_does_not_set_min_ess():
    rng = np.random.default_rng(3)
    d = ChainDraws.from_arrays({"a": rng.standard_normal((2, 500)), "k": np.ones((2, 500))})
    assert summarize(d).min_ess > 100


def test_custom_thresholds():
    rng = np.random.default_rng(0)
    d = _draws(rng.standard_normal((2, 500)))
    assert summarize(d, HealthThresholds(rhat_warn=0.5, rhat_fail=0.9)).health == "fail"


def test_report_dict_round_trip():
    r = DiagnosticsReport(1.002, 812.5, 0, "ok", 4000)
    back = DiagnosticsReport.from_dict(r.to_dict())
    assert (back.max_rhat, back.min_ess, back.divergences, back.health) == (1.002, 812.5, 0, "ok")
    assert DiagnosticsReport(math.inf, 1.0, 0, "fail").to_dict()["max_rhat"] is None


def test_summary_is_deterministic():
    rng = np.random.default_rng(5)
    d = _draws(rng.standard_normal((4, 300)))
    assert summarize(d) == summarize(d)


chains = arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(4, 40)),
                elements=st.floats(-1e3, 1e3, allow_nan=False))


@settings(max_examples=200)
@given(chains)
def test_rhat_lower_bound(x):
    # B >= 0 gives R-hat^2 >= (n-1)/n for half-chain length n; values slightly below 1 are legitimate
    r = split_rhat(_draws(x), "x")
    n = x.shape[1] // 2
    assert r * r >= (n - 1) / n - 1e-9


def test_rhat_can_dip_below_one():
    # identical half-chain means: B = 0, so R-hat = sqrt((n-1)/n) exactly
    assert split_rhat(_draws([[1.0, 0.0, 1.0, 0.0]]), "x") == pytest.approx(math.sqrt(0.5))


@settings(max_examples=200)
@given(chains, st.floats(0.01, 100.0), st.floats(-100.0, 100.0))
def test_affine_invariance(x, a, b):
    base = _draws(x)
    moved = _draws(a * x + b)
    r0, r1 = split_rhat(base, "x"), split_rhat(moved, "x")
    if math.isfinite(r0) and np.ptp(x) > 1e-6 * max(1.0, np.abs(x).max()):
        assert r1 == pytest.approx(r0, rel=1e-6)
        assert ess(moved, "x") == pytest.approx(ess(base, "x"), rel=1e-6)


@settings(max_examples=200)
@given(chains)
def test_ess_bounded(x):
    value = ess(_draws(x), "x")
    assert 1.0 <= value <= x.size


@settings(max_examples=100)
@given(st.lists(st.lists(st.booleans(), min_size=4, max_size=4), min_size=1, max_size=5))
def test_divergence_additivity(flags):
    flags = np.asarray(flags)
    total = divergence_count(_draws(np.zeros(flags.shape), flags))
    assert total == sum(divergence_count(_draws(np.zeros((1, 4)), row[None, :])) for row in flags)
