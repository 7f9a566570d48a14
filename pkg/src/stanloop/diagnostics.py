"""Convergence and sampling-health diagnostics for multi-chain draws.

Estimators are the classic (non rank-normalized) ones:

* split R-hat: each chain is cut into two halves, giving 2M sequences of
  length n; ``sqrt(((n-1)/n * W + B/n) / W)``.
* ESS: ``M*D / (1 + 2 * sum_t rho_t)`` with chain-averaged autocorrelations,
  the sum stopped at the first lag where ``rho_t + rho_{t+1} < 0``.

A parameter whose draws are all identical is *degenerate*: R-hat is reported
as exactly 1.0 and ESS as 1, with a flag, so downstream comparisons stay total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "ChainDraws",
    "DiagnosticsReport",
    "HealthThresholds",
    "ParamDiagnostics",
    "divergence_count",
    "ess",
    "is_model_parameter",
    "split_rhat",
    "summarize",
]

DIVERGENT_COLUMN = "divergent__"


@dataclass(frozen=True)
class ChainDraws:
    """Post-warmup draws grouped by chain.

    ``chains[m]`` is a (D, P) array whose columns follow ``param_names``;
    ``divergent[m]`` is the length-D divergence flag vector of chain m.
    """

    param_names: tuple[str, ...]
    chains: tuple[np.ndarray, ...]
    divergent: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        names = tuple(self.param_names)
        chains = tuple(np.asarray(c, dtype=float) for c in self.chains)
        div = tuple(np.asarray(d, dtype=bool).reshape(-1) for d in self.divergent)
        if not chains:
            raise InvalidInputError("at least one chain is required")
        if len(div) != len(chains):
            raise InvalidInputError("need one divergence vector per chain")
        if len(set(names)) != len(names):
            raise InvalidInputError("parameter names must be unique")
        shapes = {c.shape for c in chains}
        if len(shapes) != 1:
            raise InvalidInputError(f"chains differ in shape: {sorted(shapes)}")
        (shape,) = shapes
        if len(shape) != 2 or shape[1] != len(names):
            raise InvalidInputError(f"chain shape {shape} does not match {len(names)} parameter names")
        if any(d.shape[0] != shape[0] for d in div):
            raise InvalidInputError("divergence vectors must have one flag per draw")
        for arr in chains + div:
            arr.setflags(write=False)
        object.__setattr__(self, "param_names", names)
        object.__setattr__(self, "chains", chains)
        object.__setattr__(self, "divergent", div)
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def n_chains(self) -> int:
        return len(self.chains)

    @property
    def n_draws(self) -> int:
        return self.chains[0].shape[0]

    @property
    def total_draws(self) -> int:
        return self.n_chains * self.n_draws

    def param(self, name: str) -> np.ndarray:
        """(M, D) array of one parameter's draws."""
        try:
            j = self._index[name]  # type: ignore[attr-defined]
        except KeyError:
            raise InvalidInputError(f"unknown parameter {name!r}") from None
        return np.stack([c[:, j] for c in self.chains])

    @classmethod
    def from_arrays(cls, draws: Mapping[str, np.ndarray], divergent: np.ndarray | None = None) -> "ChainDraws":
        """Build from ``{name: (M, D) array}`` plus an optional (M, D) flag array."""
        names = tuple(draws)
        stacked = [np.atleast_2d(np.asarray(draws[n], dtype=float)) for n in names]
        m, d = stacked[0].shape
        chains = tuple(np.column_stack([s[c] for s in stacked]) for c in range(m))
        if divergent is None:
            divergent = np.zeros((m, d), dtype=bool)
        divergent = np.atleast_2d(np.asarray(divergent, dtype=bool))
        return cls(names, chains, tuple(divergent))

    @classmethod
    def from_chain_tables(cls, tables: Sequence[Mapping[str, np.ndarray]]) -> "ChainDraws":
        """Build from per-chain sampler output columns; ``divergent__`` becomes the flag vector."""
        if not tables:
            raise InvalidInputError("at least one chain table is required")
        names = tuple(k for k in tables[0] if k != DIVERGENT_COLUMN)
        chains = []
        flags = []
        for i, t in enumerate(tables):
            if tuple(k for k in t if k != DIVERGENT_COLUMN) != names:
                raise InvalidInputError(f"chain {i} has different columns from chain 0")
            chains.append(np.column_stack([np.asarray(t[n], dtype=float) for n in names]) if names
                          else np.empty((len(next(iter(t.values()))), 0)))
            div = t.get(DIVERGENT_COLUMN)
            n_rows = chains[-1].shape[0]
            flags.append(np.zeros(n_rows, dtype=bool) if div is None else np.asarray(div) != 0)
        return cls(names, tuple(chains), tuple(flags))


def _check_length(x: np.ndarray) -> None:
    if x.shape[1] < 4:
        raise InvalidInputError(f"need at least 4 draws per chain for split R-hat, got {x.shape[1]}")


def _split_rhat(x: np.ndarray) -> tuple[float, bool]:
    _check_length(x)
    if np.ptp(x) == 0:
        return 1.0, True
    half = x.shape[1] // 2
    # odd lengths drop the middle draw
    seqs = np.concatenate([x[:, :half], x[:, -half:]], axis=0)
    n = half
    means = seqs.mean(axis=1)
    within = seqs.var(axis=1, ddof=1).mean()
    between = n * means.var(ddof=1)
    if within == 0:
        return math.inf, False
    var_plus = (n - 1) / n * within + between / n
    return float(math.sqrt(var_plus / within)), False


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row, lags 0..D-1, via FFT."""
    d = x.shape[1]
    centered = x - x.mean(axis=1, keepdims=True)
    size = 1 << (2 * d - 1).bit_length()
    spec = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(spec * np.conj(spec), n=size, axis=1)[:, :d]
    return acov / d


def _ess(x: np.ndarray) -> tuple[float, bool]:
    _check_length(x)
    m, d = x.shape
    total = float(m * d)
    if np.ptp(x) == 0:
        return 1.0, True
    acov = _autocov(x).sum(axis=0)
    if acov[0] <= 0:
        return 1.0, True
    rho = acov / acov[0]
    pair = rho[1:-1] + rho[2:]  # pair[k] = rho_{k+1} + rho_{k+2}
    neg = np.flatnonzero(pair < 0)
    stop = int(neg[0]) + 1 if neg.size else d
    tau = 1.0 + 2.0 * float(rho[1:stop].sum())
    if tau <= 0:
        return total, False
    return float(min(max(total / tau, 1.0), total)), False


def split_rhat(draws: ChainDraws, param: str) -> float:
    return _split_rhat(draws.param(param))[0]


def ess(draws: ChainDraws, param: str) -> float:
    return _ess(draws.param(param))[0]


def divergence_count(draws: ChainDraws) -> int:
    return int(sum(int(np.count_nonzero(d)) for d in draws.divergent))


def is_model_parameter(name: str) -> bool:
    """Sampler-internal (``*__``) and ``log_lik`` columns are not summarized."""
    return not name.endswith("__") and name.split(".", 1)[0] != "log_lik"


@dataclass(frozen=True)
class HealthThresholds:
    rhat_warn: float = 1.01
    rhat_fail: float = 1.05
    divergence_fail_fraction: float = 0.005


@dataclass(frozen=True)
class ParamDiagnostics:
    rhat: float
    ess: float
    degenerate: bool = False


@dataclass(frozen=True)
class DiagnosticsReport:
    max_rhat: float
    min_ess: float
    divergences: int
    health: str
    total_draws: int = 0
    per_param: dict[str, ParamDiagnostics] = field(default_factory=dict)

    def to_dict(self) -> dict:
        """The compact form embedded in log records."""
        return {
            "max_rhat": _json_real(self.max_rhat),
            "min_ess": _json_real(self.min_ess),
            "divergences": int(self.divergences),
            "health": self.health,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DiagnosticsReport":
        return cls(
            max_rhat=math.inf if d.get("max_rhat") is None else float(d["max_rhat"]),
            min_ess=math.nan if d.get("min_ess") is None else float(d["min_ess"]),
            divergences=int(d.get("divergences", 0)),
            health=str(d.get("health", "fail")),
        )

    def summary_lines(self) -> list[str]:
        lines = [
            f"health: {self.health}",
            f"max R-hat: {self.max_rhat:.3f}",
            f"min ESS: {self.min_ess:.0f}",
            f"divergences: {self.divergences} / {self.total_draws} draws",
        ]
        flagged = [
            (n, p) for n, p in self.per_param.items() if p.rhat > 1.01 or p.degenerate
        ]
        for name, p in sorted(flagged, key=lambda t: -t[1].rhat)[:10]:
            note = " (constant)" if p.degenerate else ""
            lines.append(f"  {name}: R-hat {p.rhat:.3f}, ESS {p.ess:.0f}{note}")
        return lines


def _json_real(v: float) -> float | None:
    return float(v) if math.isfinite(v) else None


def summarize(
    draws: ChainDraws,
    thresholds: HealthThresholds = HealthThresholds(),
    include: Callable[[str], bool] = is_model_parameter,
) -> DiagnosticsReport:
    per_param: dict[str, ParamDiagnostics] = {}
    for name in draws.param_names:
        if not include(name):
            continue
        x = draws.param(name)
        rhat, degenerate = _split_rhat(x)
        n_eff, _ = _ess(x)
        per_param[name] = ParamDiagnostics(rhat, n_eff, degenerate)
    divergences = divergence_count(draws)
    total = draws.total_draws
    max_rhat = max((p.rhat for p in per_param.values()), default=1.0)
    # constant columns (fixed quantities) get ESS 1 by convention; they say nothing about mixing
    min_ess = min((p.ess for p in per_param.values() if not p.degenerate), default=float(total))

    if max_rhat > thresholds.rhat_fail or divergences > thresholds.divergence_fail_fraction * total:
        health = "fail"
    elif max_rhat > thresholds.rhat_warn or divergences > 0:
        health = "warn"
    else:
        health = "ok"
    return DiagnosticsReport(max_rhat, min_ess, divergences, health, total, per_param)
