"""Drive an external CmdStan installation: build model executables, run chains, parse output.

CmdStan is located through ``$STANLOOP_CMDSTAN``, then ``$CMDSTAN``, or an
explicit path. Sampling is reproducible for a fixed seed only as far as the
installed CmdStan version is.
"""

from __future__ import annotations

import logging
import os
import platform
import shutil
import subprocess
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from filelock import FileLock

from ..errors import CompileError, ConfigurationError, SamplerError
from .base import FitResult, ModelSource, SamplerConfig
from .io import read_chain_csv, write_data_file

log = logging.getLogger(__name__)

ENV_VARS = ("STANLOOP_CMDSTAN", "CMDSTAN")
_EXE_SUFFIX = ".exe" if platform.system() == "Windows" else ""
_OUTPUT_TAIL = 4000


def locate_cmdstan(path: str | os.PathLike | None = None) -> Path:
    """Resolve and sanity-check the CmdStan root directory."""
    candidates = [(str(path), "argument")] if path else [
        (os.environ[v], f"${v}") for v in ENV_VARS if os.environ.get(v)
    ]
    if not candidates:
        raise ConfigurationError(
            "CmdStan not found: set STANLOOP_CMDSTAN (or CMDSTAN) to the CmdStan root directory, "
            "or pass --cmdstan"
        )
    root_s, source = candidates[0]
    root = Path(root_s).expanduser()
    if not root.is_dir():
        raise ConfigurationError(f"CmdStan root from {source} does not exist: {root}")
    if not (root / "makefile").exists() and not (root / "Makefile").exists():
        raise ConfigurationError(f"{root} (from {source}) has no makefile; not a CmdStan root")
    if shutil.which("make") is None:
        raise ConfigurationError("'make' is required to build CmdStan models but is not on PATH")
    return root.resolve()


def cmdstan_available() -> bool:
    try:
        locate_cmdstan()
    except ConfigurationError:
        return False
    return True


@dataclass(frozen=True)
class CompiledModel:
    exe: Path
    model_hash: str
    cache_hit: bool


def _tail(text: str) -> str:
    return text if len(text) <= _OUTPUT_TAIL else "...\n" + text[-_OUTPUT_TAIL:]


class CmdStanBackend:
    backend_id = "cmdstan"

    def __init__(self, cmdstan_root: str | os.PathLike | None = None, cache_dir: str | os.PathLike | None = None):
        self.root = locate_cmdstan(cmdstan_root)
        self.cache_dir = Path(cache_dir) if cache_dir else Path(tempfile.gettempdir()) / "stanloop-models"
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, key: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(key, threading.Lock())

    def compile(self, model: ModelSource) -> CompiledModel:
        h = model.hash
        workdir = self.cache_dir / h
        exe = workdir / f"model{_EXE_SUFFIX}"
        # one build per hash, across threads and processes
        with self._lock_for(h), FileLock(str(self.cache_dir / f"{h}.lock")):
            if exe.exists():
                return CompiledModel(exe, h, True)
            workdir.mkdir(parents=True, exist_ok=True)
            (workdir / "model.stan").write_text(model.text, encoding="utf-8")
            target = exe.with_suffix("") if _EXE_SUFFIX else exe
            cmd = ["make", "-C", str(self.root), str(target.resolve())]
            log.debug("compiling %s: %s", h[:12], cmd)
            proc = subprocess.run(cmd, capture_output=True, text=True)
            if proc.returncode != 0 or not exe.exists():
                output = (proc.stderr or "") + (proc.stdout or "")
                raise CompileError(f"model {h[:12]} failed to compile", _tail(output.strip()))
        return CompiledModel(exe, h, False)

    def _run_chain(self, exe: Path, data_file: Path, out_dir: Path, cfg: SamplerConfig, chain: int) -> Path:
        out = out_dir / f"chain-{chain + 1}.csv"
        cmd = [
            str(exe),
            f"id={chain + 1}",
            "random", f"seed={cfg.chain_seed(chain)}",
            "data", f"file={data_file}",
            "output", f"file={out}", "refresh=0",
            "method=sample", f"num_samples={cfg.sampling_draws}", f"num_warmup={cfg.warmup_draws}",
        ]
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True, timeout=cfg.timeout_s)
        except subprocess.TimeoutExpired as exc:
            raise SamplerError(f"chain {chain + 1} timed out after {cfg.timeout_s}s",
                               _tail(str(exc.stdout or ""))) from None
        if proc.returncode != 0:
            output = ((proc.stdout or "") + (proc.stderr or "")).strip()
            raise SamplerError(f"chain {chain + 1} exited with status {proc.returncode}", _tail(output))
        if not out.exists():
            raise SamplerError(f"chain {chain + 1} produced no output file", _tail(proc.stdout or ""))
        return out

    def sample(
        self,
        compiled: CompiledModel,
        data: Mapping[str, Any],
        cfg: SamplerConfig,
        n_test: int | None = None,
        schema: Mapping[str, str] | None = None,
    ) -> FitResult:
        t0 = time.perf_counter()
        with tempfile.TemporaryDirectory(prefix="stanloop-run-") as tmp:
            run_dir = Path(tmp)
            data_file = write_data_file(data, run_dir / "data.json", schema)
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                futures = [
                    pool.submit(self._run_chain, compiled.exe, data_file, run_dir, cfg, c)
                    for c in range(cfg.chains)
                ]
                paths = [f.result() for f in futures]
            tables = [read_chain_csv(p) for p in paths]
        return FitResult.from_chain_tables(tables, n_test, time.perf_counter() - t0, self.backend_id)

    def fit(
        self,
        model: ModelSource,
        data: Mapping[str, Any],
        cfg: SamplerConfig,
        n_test: int | None = None,
        schema: Mapping[str, str] | None = None,
    ) -> FitResult:
        return self.sample(self.compile(model), data, cfg, n_test, schema)
