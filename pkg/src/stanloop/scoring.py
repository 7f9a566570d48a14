"""Held-out predictive scores computed from per-draw log-likelihoods.

All scores are in nats. The central quantity is the negative log predictive
density::

    NLPD = -(1/N) * sum_n log( (1/S) * sum_s p(y_n | theta_s) )

evaluated with a max-shifted log-sum-exp so that entries as small as -1e6
neither underflow to log(0) nor lose precision.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "DegeneratePredictiveWarning",
    "LogLikMatrix",
    "OracleRegressionParams",
    "dgp_mean",
    "dgp_sigma",
    "gaussian_nll",
    "nlpd",
    "nlpd_from_cdf",
    "oracle_nlpd_gaussian",
    "pointwise_lpd",
]

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class DegeneratePredictiveWarning(RuntimeWarning):
    """Some test point has zero density under every posterior draw."""

    def __init__(self, message: str, columns: Sequence[int] = ()) -> None:
        super().__init__(message)
        self.columns = tuple(int(c) for c in columns)


@dataclass(frozen=True)
class LogLikMatrix:
    """S posterior draws by N test observations of log p(y_n | theta_s).

    Rows are draws, columns follow the test-set row order. Entries may be
    ``-inf`` (zero likelihood) but never ``+inf`` or NaN.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=float, copy=True)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInputError(
                f"log-likelihood matrix must be non-empty 2-D (draws x points), got shape {arr.shape}"
            )
        nan_at = np.argwhere(np.isnan(arr))
        if nan_at.size:
            s, n = (int(v) for v in nan_at[0])
            raise InvalidInputError(f"NaN log-likelihood at draw {s}, test point {n}")
        pinf_at = np.argwhere(np.isposinf(arr))
        if pinf_at.size:
            s, n = (int(v) for v in pinf_at[0])
            raise InvalidInputError(f"+inf log-likelihood at draw {s}, test point {n}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n_draws(self) -> int:
        return self.values.shape[0]

    @property
    def n_points(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_columns(cls, columns: dict[str, np.ndarray], prefix: str = "log_lik") -> "LogLikMatrix":
        """Assemble from sampler-style named columns ``log_lik.1`` .. ``log_lik.N``."""
        indexed = []
        for name, col in columns.items():
            head, dot, idx = name.partition(".")
            if head == prefix and dot and idx.isdigit():
                indexed.append((int(idx), np.asarray(col, dtype=float)))
        if not indexed:
            raise InvalidInputError(f"no '{prefix}.*' columns found")
        indexed.sort(key=lambda t: t[0])
        expected = list(range(1, len(indexed) + 1))
        if [i for i, _ in indexed] != expected:
            raise InvalidInputError(f"'{prefix}' columns are not contiguous from {prefix}.1")
        return cls(np.column_stack([c for _, c in indexed]))

    def to_columns(self, prefix: str = "log_lik") -> dict[str, np.ndarray]:
        return {f"{prefix}.{n + 1}": self.values[:, n] for n in range(self.n_points)}

    def to_csv(self, path: str | Path) -> Path:
        from .backend.io import write_draws_csv

        return write_draws_csv(self.to_columns(), path)

    @classmethod
    def from_csv(cls, path: str | Path) -> "LogLikMatrix":
        from .backend.io import read_chain_csv

        return cls.from_columns(read_chain_csv(path))


def _as_matrix(loglik: LogLikMatrix | np.ndarray | Sequence[Sequence[float]]) -> np.ndarray:
    if isinstance(loglik, LogLikMatrix):
        return loglik.values
    return LogLikMatrix(np.asarray(loglik, dtype=float)).values


def pointwise_lpd(loglik: LogLikMatrix | np.ndarray) -> np.ndarray:
    """Per-test-point log predictive density, ``logmeanexp`` over draws."""
    v = _as_matrix(loglik)
    n_draws = v.shape[0]
    col_max = v.max(axis=0)
    dead = np.isneginf(col_max)
    shift = np.where(dead, 0.0, col_max)
    with np.errstate(under="ignore", divide="ignore"):
        total = np.exp(v - shift).sum(axis=0)
        # log(total) - log(S) is grouped first so constant columns come back exact.
        out = shift + (np.log(total) - math.log(n_draws))
    out[dead] = -np.inf
    if dead.any():
        cols = np.flatnonzero(dead)
        warnings.warn(
            DegeneratePredictiveWarning(
                f"{cols.size} test point(s) have zero density under every draw: "
                f"columns {cols[:10].tolist()}{'...' if cols.size > 10 else ''}",
                cols,
            ),
            stacklevel=2,
        )
    return out


def nlpd(loglik: LogLikMatrix | np.ndarray) -> float:
    """Negative log predictive density, averaged over test points (nats)."""
    lpd = pointwise_lpd(loglik)
    if np.isneginf(lpd).any():
        return math.inf
    return float(-np.mean(lpd))


def gaussian_nll(y, mu, sigma) -> np.ndarray:
    """Pointwise ``-log Normal(y; mu, sigma)``."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(sigma > 0)):
        raise InvalidInputError("sigma must be strictly positive")
    z = (y - mu) / sigma
    return HALF_LOG_2PI + np.log(sigma) + 0.5 * z * z


def oracle_nlpd_gaussian(y, mu, sigma) -> float:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    if not (y.shape == mu.shape == sigma.shape) or y.ndim != 1 or y.size == 0:
        raise InvalidInputError(
            f"y, mu, sigma must be equal-length non-empty vectors, got {y.shape}, {mu.shape}, {sigma.shape}"
        )
    return float(np.mean(gaussian_nll(y, mu, sigma)))


@dataclass(frozen=True)
class OracleRegressionParams:
    """True mean and noise curves of the outlier-regression process.

    mean(x)  = amplitude * sin(frequency * x) + slope * x
    sigma(x) = sigma_base + bump_amplitude * exp(-0.5 * ((x - bump_center) / bump_width) ** 2)
    """

    amplitude: float = 2.0
    frequency: float = 1.2
    slope: float = 0.3
    sigma_base: float = 0.3
    bump_amplitude: float = 0.8
    bump_center: float = 3.0
    bump_width: float = 1.5

    def __post_init__(self) -> None:
        vals = [getattr(self, k) for k in self.__dataclass_fields__]
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError("oracle parameters must be finite")
        if self.bump_width <= 0:
            raise InvalidInputError("bump_width must be positive")
        if self.sigma_base <= 0 or self.sigma_base + min(self.bump_amplitude, 0.0) <= 0:
            raise InvalidInputError("sigma(x) must stay positive for all x")

    def mean(self, x):
        x = np.asarray(x, dtype=float)
        return self.amplitude * np.sin(self.frequency * x) + self.slope * x

    def sigma(self, x):
        x = np.asarray(x, dtype=float)
        z = (x - self.bump_center) / self.bump_width
        return self.sigma_base + self.bump_amplitude * np.exp(-0.5 * z * z)

    def to_dict(self) -> dict[str, float]:
        return {k: float(getattr(self, k)) for k in self.__dataclass_fields__}


DEFAULT_REGRESSION = OracleRegressionParams()


def dgp_mean(x):
    out = DEFAULT_REGRESSION.mean(x)
    return float(out) if np.ndim(out) == 0 else out


def dgp_sigma(x):
    out = DEFAULT_REGRESSION.sigma(x)
    return float(out) if np.ndim(out) == 0 else out


def nlpd_from_cdf(cdf: Callable[[np.ndarray], np.ndarray], y, delta: float = 0.02) -> float:
    """NLPD of a predictive known only through its CDF.

    The density at each point is the central difference
    ``(cdf(y + delta) - cdf(y - delta)) / (2 * delta)``. ``cdf`` is called
    on arrays; a per-point callable may instead be passed wrapped in
    ``np.vectorize``.
    """
    if not delta > 0:
        raise InvalidInputError(f"delta must be positive, got {delta}")
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.size == 0:
        raise InvalidInputError("y must be non-empty")
    upper = np.asarray(cdf(y + delta), dtype=float).reshape(y.shape)
    lower = np.asarray(cdf(y - delta), dtype=float).reshape(y.shape)
    density = (upper - lower) / (2.0 * delta)
    bad = np.flatnonzero(~(density > 0))
    if bad.size:
        i = int(bad[0])
        raise InvalidInputError(
            f"non-positive finite-difference density {density[i]!r} at point {i} (y={y[i]!r}); "
            "delta too small or CDF flat there"
        )
    return float(-np.mean(np.log(density)))
