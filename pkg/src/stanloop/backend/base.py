from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Any, Mapping, Protocol, Sequence

import numpy as np

from ..diagnostics import DIVERGENT_COLUMN, ChainDraws
from ..errors import ContractViolation, InvalidInputError
from ..scoring import LogLikMatrix


@dataclass(frozen=True)
class ModelSource:
    text: str

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise InvalidInputError("model text is empty")

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    @property
    def short_hash(self) -> str:
        return self.hash[:12]


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup_draws: int = 1000
    sampling_draws: int = 1000
    seed: int = 1
    parallel_chains: int | None = None
    timeout_s: float | None = None

    def __post_init__(self) -> None:
        if self.chains < 1:
            raise InvalidInputError("chains must be >= 1")
        if self.sampling_draws < 1:
            raise InvalidInputError("sampling_draws must be >= 1")
        if self.warmup_draws < 0:
            raise InvalidInputError("warmup_draws must be >= 0")
        if self.parallel_chains is not None and self.parallel_chains < 1:
            raise InvalidInputError("parallel_chains must be >= 1")

    @property
    def workers(self) -> int:
        return self.parallel_chains or self.chains

    def chain_seed(self, chain_index: int) -> int:
        return self.seed + chain_index


@dataclass(frozen=True)
class FitResult:
    draws: ChainDraws
    loglik: LogLikMatrix
    wall_time: float
    backend_id: str

    @classmethod
    def from_chain_tables(
        cls,
        tables: Sequence[Mapping[str, np.ndarray]],
        n_test: int | None,
        wall_time: float,
        backend_id: str,
    ) -> "FitResult":
        """Assemble a fit from per-chain output columns, enforcing the output contract."""
        if not tables:
            raise InvalidInputError("no chains")
        for i, t in enumerate(tables):
            if DIVERGENT_COLUMN not in t:
                raise ContractViolation(f"chain {i + 1} output lacks the '{DIVERGENT_COLUMN}' column")
            if not any(k.startswith("log_lik.") for k in t) and "log_lik" not in t:
                raise ContractViolation(
                    f"chain {i + 1} output lacks 'log_lik.*' columns: the model must declare "
                    "vector[N_test] log_lik in generated quantities"
                )
        draws = ChainDraws.from_chain_tables(tables)
        per_chain = []
        for i, t in enumerate(tables):
            cols = {k: v for k, v in t.items() if k == "log_lik" or k.startswith("log_lik.")}
            if "log_lik" in cols:  # scalar log_lik, N_test == 1
                cols = {"log_lik.1": cols["log_lik"]}
            try:
                per_chain.append(LogLikMatrix.from_columns(cols).values)
            except InvalidInputError as exc:
                raise ContractViolation(f"chain {i + 1}: {exc}") from None
        width = per_chain[0].shape[1]
        if n_test is not None and width != n_test:
            raise ContractViolation(f"log_lik has {width} entries, expected N_test = {n_test}")
        # chain-major: row c * D + d is chain c, draw d
        loglik = LogLikMatrix(np.concatenate(per_chain, axis=0))
        return cls(draws, loglik, float(wall_time), backend_id)


class Backend(Protocol):
    backend_id: str

    def fit(
        self,
        model: ModelSource,
        data: Mapping[str, Any],
        cfg: SamplerConfig,
        n_test: int | None = None,
        schema: Mapping[str, str] | None = None,
    ) -> FitResult: ...
