"""Sampler-free backend: exact posterior on a grid over up to three parameters.

Used to check the scoring and loop pipeline against closed-form answers
without any external sampler. Draws come from the normalized grid
probabilities, jittered uniformly within the chosen cell.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Any, Callable, Mapping

import numpy as np

from ..diagnostics import ChainDraws
from ..errors import CompileError, InvalidInputError
from ..scoring import LogLikMatrix
from .base import FitResult, ModelSource, SamplerConfig

Params = Mapping[str, np.ndarray]
LogDensityFn = Callable[[Params], np.ndarray]
LogLikFn = Callable[[Params], np.ndarray]

MAX_DIMS = 3
MIN_RESOLUTION = 16


def grid_fit(
    log_posterior: LogDensityFn,
    bounds: Mapping[str, tuple[float, float]],
    resolution: int,
    loglik_fn: LogLikFn,
    n_test: int,
    cfg: SamplerConfig,
) -> FitResult:
    """Fit by grid enumeration.

    ``log_posterior`` maps ``{name: array}`` (grid-shaped) to the unnormalized
    log density; ``loglik_fn`` maps ``{name: (S,) array}`` to an (S, n_test)
    array of per-draw test log-likelihoods.
    """
    t0 = time.perf_counter()
    names = list(bounds)
    if not 1 <= len(names) <= MAX_DIMS:
        raise InvalidInputError(f"grid_fit supports 1..{MAX_DIMS} parameters, got {len(names)}")
    if resolution < MIN_RESOLUTION:
        raise InvalidInputError(f"resolution must be >= {MIN_RESOLUTION}")
    widths = []
    axes = []
    for name in names:
        lo, hi = (float(b) for b in bounds[name])
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise InvalidInputError(f"bounds for {name!r} must be finite and increasing")
        h = (hi - lo) / resolution
        widths.append(h)
        axes.append(lo + (np.arange(resolution) + 0.5) * h)
    mesh = np.meshgrid(*axes, indexing="ij")
    lp = np.asarray(log_posterior(dict(zip(names, mesh))), dtype=float)
    if lp.shape != mesh[0].shape:
        raise InvalidInputError(f"log_posterior returned shape {lp.shape}, expected {mesh[0].shape}")
    lp = np.where(np.isnan(lp), -np.inf, lp).ravel()
    top = lp.max()
    if not np.isfinite(top):
        raise InvalidInputError("log posterior is -inf everywhere on the grid")
    prob = np.exp(lp - top)
    prob /= prob.sum()

    rng = np.random.default_rng(cfg.seed)
    n_draws = cfg.chains * cfg.sampling_draws
    cells = rng.choice(prob.size, size=n_draws, p=prob)
    idx = np.unravel_index(cells, mesh[0].shape)
    params = {
        name: axes[k][idx[k]] + (rng.random(n_draws) - 0.5) * widths[k]
        for k, name in enumerate(names)
    }
    ll = np.asarray(loglik_fn(params), dtype=float)
    if ll.shape != (n_draws, n_test):
        raise InvalidInputError(f"loglik_fn returned shape {ll.shape}, expected {(n_draws, n_test)}")

    shaped = {n: v.reshape(cfg.chains, cfg.sampling_draws) for n, v in params.items()}
    draws = ChainDraws.from_arrays(shaped)
    return FitResult(draws, LogLikMatrix(ll), time.perf_counter() - t0, "grid")


@dataclass(frozen=True)
class GridModel:
    """A grid-fittable model: builders receive the data dict."""

    bounds: Mapping[str, tuple[float, float]]
    log_posterior: Callable[[Mapping[str, Any]], LogDensityFn]
    loglik: Callable[[Mapping[str, Any]], LogLikFn]
    resolution: int = 256


class GridBackend:
    """Backend that resolves model texts to registered grid models.

    Lets the full evaluate/decide loop run without an external sampler;
    an unregistered model text fails like a compile error.
    """

    backend_id = "grid"

    def __init__(self, models: Mapping[str, GridModel]):
        self._models = {ModelSource(text).hash: m for text, m in models.items()}

    def fit(
        self,
        model: ModelSource,
        data: Mapping[str, Any],
        cfg: SamplerConfig,
        n_test: int | None = None,
        schema: Mapping[str, str] | None = None,
    ) -> FitResult:
        gm = self._models.get(model.hash)
        if gm is None:
            raise CompileError(f"model {model.short_hash}: no grid model registered for this text")
        n = int(n_test if n_test is not None else data["N_test"])
        return grid_fit(gm.log_posterior(data), gm.bounds, gm.resolution, gm.loglik(data), n, cfg)
