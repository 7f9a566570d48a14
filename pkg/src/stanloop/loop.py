"""The improve/evaluate/decide cycle, its JSONL log, and the final report.

A proposal is kept only if its NLPD is strictly below the best accepted so far;
otherwise the working model is restored byte-for-byte from its snapshot.
Iteration 0 is the baseline and is always kept.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

from .backend.base import Backend, ModelSource, SamplerConfig
from .diagnostics import DiagnosticsReport, HealthThresholds, summarize
from .errors import (
    CompileError,
    ContractViolation,
    InvalidInputError,
    ParseError,
    ProposerError,
    SamplerError,
    WorkspaceError,
)
from .proposer import Proposal, Proposer, ProposerContext
from .scoring import nlpd as score_nlpd
from .workspace import WorkspaceLayout, atomic_write_bytes, protected_access

log = logging.getLogger(__name__)

Clock = Callable[[], str]


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


@dataclass(frozen=True)
class LoopConfig:
    max_iterations: int = 20
    patience: int = 3
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    dataset: str | None = None

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be >= 1")
        if self.patience < 1:
            raise InvalidInputError("patience must be >= 1")


class Decision(enum.Enum):
    ACCEPT = "accept"
    REVERT = "revert"


def decide(new_nlpd: float, best_nlpd: float) -> Decision:
    """Accept iff ``new_nlpd`` is strictly below ``best_nlpd``; +inf never wins."""
    if math.isnan(new_nlpd) or math.isnan(best_nlpd):
        raise InvalidInputError(f"NaN NLPD in decision (new={new_nlpd}, best={best_nlpd})")
    if new_nlpd == -math.inf:
        raise InvalidInputError("NLPD of -inf is impossible for a normalized predictive")
    return Decision.ACCEPT if new_nlpd < best_nlpd else Decision.REVERT


# --- records and log ----------------------------------------------------------------------


def _real_to_json(v: float) -> float | None:
    return v if math.isfinite(v) else None


def _real_from_json(v: Any) -> float:
    return math.inf if v is None else float(v)


_FAILED_DIAGNOSTICS = {"max_rhat": None, "min_ess": None, "divergences": None, "health": "error"}
RECORD_FIELDS = (
    "iteration", "timestamp", "nlpd", "accepted", "best_so_far", "notes",
    "rationale", "model_hash", "diagnostics", "wall_time_s",
)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    nlpd: float
    accepted: bool
    best_so_far: float
    notes: str
    rationale: str
    model_hash: str
    diagnostics: DiagnosticsReport | None
    wall_time_s: float
    timestamp: str

    def to_dict(self) -> dict[str, Any]:
        # +inf (failed evaluation) is stored as null; JSON has no infinity
        return {
            "iteration": self.iteration,
            "timestamp": self.timestamp,
            "nlpd": _real_to_json(self.nlpd),
            "accepted": self.accepted,
            "best_so_far": _real_to_json(self.best_so_far),
            "notes": self.notes,
            "rationale": self.rationale,
            "model_hash": self.model_hash,
            "diagnostics": self.diagnostics.to_dict() if self.diagnostics else dict(_FAILED_DIAGNOSTICS),
            "wall_time_s": self.wall_time_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, allow_nan=False)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "IterationRecord":
        missing = [k for k in RECORD_FIELDS if k not in d]
        if missing:
            raise InvalidInputError(f"log record lacks fields: {', '.join(missing)}")
        diag = d["diagnostics"]
        return cls(
            iteration=int(d["iteration"]),
            nlpd=_real_from_json(d["nlpd"]),
            accepted=bool(d["accepted"]),
            best_so_far=_real_from_json(d["best_so_far"]),
            notes=str(d["notes"]),
            rationale=str(d["rationale"]),
            model_hash=str(d["model_hash"]),
            diagnostics=None if diag is None or diag.get("health") == "error" else DiagnosticsReport.from_dict(diag),
            wall_time_s=float(d["wall_time_s"]),
            timestamp=str(d["timestamp"]),
        )


class ExperimentLog:
    """Append-only record sequence, mirrored to a JSONL file when ``path`` is set."""

    def __init__(self, path: str | os.PathLike | None = None, records: Iterable[IterationRecord] = ()):
        self.path = Path(path) if path is not None else None
        self.records: list[IterationRecord] = list(records)
        self.stop_reason: str | None = None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, record: IterationRecord) -> None:
        if record.iteration != len(self.records):
            raise InvalidInputError(f"record iteration {record.iteration} breaks contiguity (expected {len(self.records)})")
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8", newline="\n") as f:
                f.write(record.to_json() + "\n")
                f.flush()
                os.fsync(f.fileno())
        self.records.append(record)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentLog":
        """Read a log; a torn final line left by a crash is dropped with a warning."""
        path = Path(path)
        if not path.exists():
            return cls(path)
        lines = path.read_text(encoding="utf-8").split("\n")
        records = []
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                rec = IterationRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, InvalidInputError, KeyError, TypeError, ValueError) as exc:
                if lineno == len(lines):
                    log.warning("%s: ignoring incomplete final line: %s", path, exc)
                    break
                raise ParseError(f"bad log record: {exc}", lineno, str(path)) from None
            if rec.iteration != len(records):
                raise ParseError(f"iteration {rec.iteration} breaks contiguity", lineno, str(path))
            records.append(rec)
        return cls(path, records)

    @property
    def best_nlpd(self) -> float:
        return self.records[-1].best_so_far if self.records else math.inf

    def best_record(self) -> IterationRecord | None:
        """The most recent accepted record, which holds the running best."""
        for rec in reversed(self.records):
            if rec.accepted:
                return rec
        return None

    def trailing_rejects(self) -> int:
        n = 0
        for rec in reversed(self.records):
            if rec.accepted:
                break
            n += 1
        return n


# --- evaluation -----------------------------------------------------------------------------


@dataclass(frozen=True)
class Evaluation:
    nlpd: float
    diagnostics: DiagnosticsReport | None = None
    wall_time_s: float = 0.0
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def summary(self) -> str:
        if self.failed:
            return f"evaluation failed\n{self.error}"
        lines = [f"NLPD: {self.nlpd:.4f}"]
        if self.diagnostics is not None:
            lines += self.diagnostics.summary_lines()
        lines.append(f"wall time: {self.wall_time_s:.1f}s")
        return "\n".join(lines)


class Evaluator(Protocol):
    def evaluate(self, model: ModelSource) -> Evaluation: ...


class BackendEvaluator:
    """Fit a model on the workspace's dataset and score it on the protected test split."""

    def __init__(
        self,
        backend: Backend,
        layout: WorkspaceLayout,
        sampler: SamplerConfig = SamplerConfig(),
        thresholds: HealthThresholds = HealthThresholds(),
    ):
        self.backend = backend
        self.layout = layout
        self.sampler = sampler
        self.thresholds = thresholds
        self._dataset = None

    def _load(self):
        if self._dataset is None:
            from .datagen import load_emitted

            with protected_access(self.layout):
                self._dataset = load_emitted(self.layout.dataset_dir)
        return self._dataset

    def evaluate(self, model: ModelSource) -> Evaluation:
        ds = self._load()
        t0 = time.perf_counter()
        try:
            fit = self.backend.fit(model, ds.stan_data(), self.sampler, ds.n_test, ds.stan_schema())
        except (CompileError, SamplerError, ContractViolation, ParseError) as exc:
            return Evaluation(math.inf, None, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
        value = score_nlpd(fit.loglik)
        return Evaluation(value, summarize(fit.draws, self.thresholds), fit.wall_time)


class ReplayEvaluator:
    """Returns recorded NLPD values in order, ignoring the model."""

    def __init__(self, values: Sequence[float]):
        self.values = [float(v) for v in values]
        self.calls = 0

    def evaluate(self, model: ModelSource) -> Evaluation:
        if self.calls >= len(self.values):
            raise InvalidInputError(f"replay exhausted after {len(self.values)} evaluations")
        value = self.values[self.calls]
        self.calls += 1
        if math.isinf(value):
            return Evaluation(math.inf, None, 0.0, "replayed failure")
        return Evaluation(value, DiagnosticsReport(1.0, 1000.0, 0, "ok", 1000), 0.0)


# --- iterations -------------------------------------------------------------------------------


def record_evaluation(
    log_: ExperimentLog,
    model_hash: str,
    ev: Evaluation,
    notes: str,
    rationale: str,
    clock: Clock = utc_now,
) -> IterationRecord:
    """Apply the decision rule to an evaluation and append the resulting record."""
    idx = len(log_)
    if idx == 0:
        accepted = True
        best = ev.nlpd
    else:
        accepted = decide(ev.nlpd, log_.best_nlpd) is Decision.ACCEPT
        best = ev.nlpd if accepted else log_.best_nlpd
    if ev.failed:
        notes = f"{notes}\n[evaluation failed] {ev.error}" if notes else f"[evaluation failed] {ev.error}"
    rec = IterationRecord(idx, ev.nlpd, accepted, best, notes, rationale, model_hash, ev.diagnostics,
                          round(ev.wall_time_s, 6), clock())
    log_.append(rec)
    return rec


@dataclass
class LoopState:
    layout: WorkspaceLayout
    log: ExperimentLog
    evaluator: Evaluator
    clock: Clock = utc_now
    last_summary: str = ""


def run_iteration(proposal: Proposal, state: LoopState) -> IterationRecord:
    """Snapshot, install, evaluate, decide, and restore on revert."""
    if proposal.stop or proposal.model is None:
        raise ProposerError("cannot run an iteration for a stop signal")
    layout = state.layout
    store = layout.snapshots()
    model_file = layout.model_file
    previous = store.snapshot(model_file) if model_file.exists() else None
    if previous is None and len(state.log) > 0:
        raise WorkspaceError(f"{model_file} disappeared; the accepted model cannot be snapshotted")

    data = proposal.model_text.encode("utf-8")
    new_hash = store.put(data)
    atomic_write_bytes(model_file, data)
    try:
        ev = state.evaluator.evaluate(proposal.model)
    except BaseException:
        # harness errors (not model failures) must not leave an unrecorded model installed
        if previous is not None:
            store.restore(previous, model_file)
        else:
            model_file.unlink(missing_ok=True)
        raise
    rec = record_evaluation(state.log, new_hash, ev, proposal.notes, proposal.rationale, state.clock)
    if not rec.accepted:
        if previous not in store:
            raise WorkspaceError(f"snapshot {previous} is missing; cannot revert {model_file}")
        store.restore(previous, model_file)
    state.last_summary = ev.summary()
    return rec


def run_loop(
    proposer: Proposer,
    layout: WorkspaceLayout,
    evaluator: Evaluator,
    cfg: LoopConfig = LoopConfig(),
    clock: Clock = utc_now,
    on_record: Callable[[IterationRecord], None] | None = None,
) -> ExperimentLog:
    """Run until patience, the iteration cap, or a proposer stop; resumes an existing log."""
    log_ = ExperimentLog.load(layout.log_path)
    state = LoopState(layout, log_, evaluator, clock)
    if len(log_) > 0:
        # a crash between install and record can leave an unrecorded model in place
        install_best(layout, log_)
    dataset_md = layout.descriptor.read_text(encoding="utf-8") if layout.descriptor.exists() else ""
    while True:
        if len(log_) >= cfg.max_iterations:
            log_.stop_reason = "max_iterations"
            break
        if len(log_) > 0 and log_.trailing_rejects() >= cfg.patience:
            log_.stop_reason = "patience"
            break
        current = layout.model_file.read_text(encoding="utf-8") if layout.model_file.exists() else ""
        ctx = ProposerContext(dataset_md, tuple(log_.records), current, state.last_summary)
        proposal = proposer.propose(ctx)
        if proposal.stop:
            if len(log_) == 0:
                raise ProposerError("proposer signalled stop before proposing a baseline")
            log_.stop_reason = "proposer"
            break
        rec = run_iteration(proposal, state)
        if on_record is not None:
            on_record(rec)
    install_best(layout, log_)
    return log_


def install_best(layout: WorkspaceLayout, log_: ExperimentLog) -> None:
    best = log_.best_record()
    if best is None:
        return
    store = layout.snapshots()
    if best.model_hash not in store:
        raise WorkspaceError(f"snapshot of best model {best.model_hash[:12]} is missing")
    store.restore(best.model_hash, layout.model_file)


# --- report -----------------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.4f}" if math.isfinite(v) else "failed"


def _cell(text: str) -> str:
    first = text.strip().splitlines()[0] if text.strip() else ""
    return first.replace("|", "\\|")


def report_markdown(log_: ExperimentLog, model_text: Callable[[str], str | None] = lambda h: None,
                    title: str = "Experiment report") -> str:
    if not log_.records:
        raise InvalidInputError("cannot report on an empty log")
    best = log_.best_record()
    assert best is not None  # iteration 0 is always accepted
    n_acc = sum(r.accepted for r in log_.records)
    out = [
        f"# {title}",
        "",
        f"- Best model: iteration {best.iteration}, NLPD {_fmt(best.nlpd)} (model `{best.model_hash[:12]}`)",
        f"- Iterations: {len(log_)} ({n_acc} accepted, {len(log_) - n_acc} reverted)",
    ]
    if log_.records[0].nlpd != best.nlpd and math.isfinite(log_.records[0].nlpd) and math.isfinite(best.nlpd):
        out.append(f"- Improvement over baseline: {best.nlpd - log_.records[0].nlpd:+.4f}")
    out += [
        "",
        "## Trajectory",
        "",
        "Δ is the NLPD minus the best NLPD before that iteration.",
        "",
        "| Iter | NLPD | Δ | Kept | Health | Notes |",
        "|---:|---:|---:|:---:|:---|:---|",
    ]
    prev_best = math.nan
    for rec in log_.records:
        if rec.iteration == 0:
            delta, mark = "---", "baseline"
        else:
            d = rec.nlpd - prev_best
            delta = f"{d:+.4f}" if math.isfinite(d) else "n/a"
            mark = "✓" if rec.accepted else "×"
        health = rec.diagnostics.health if rec.diagnostics else "error"
        out.append(f"| {rec.iteration} | {_fmt(rec.nlpd)} | {delta} | {mark} | {health} | {_cell(rec.notes)} |")
        prev_best = rec.best_so_far
    out += ["", "## Best model", ""]
    if best.rationale.strip():
        out += [f"Rationale: {_cell(best.rationale)}", ""]
    source = model_text(best.model_hash)
    if source is None:
        out.append(f"(source unavailable: no snapshot for {best.model_hash[:12]})")
    else:
        out += ["```stan", source.rstrip("\n"), "```"]
    return "\n".join(out) + "\n"


def write_report(log_: ExperimentLog, path: str | os.PathLike, layout: WorkspaceLayout | None = None) -> Path:
    """Render the report; reading snapshots for the best model's source if a layout is given."""
    store = layout.snapshots() if layout is not None else None
    title = f"Experiment report: {layout.name}" if layout is not None else "Experiment report"
    text = report_markdown(log_, store.text if store is not None else (lambda h: None), title)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(path, text.encode("utf-8"))
    return path


def replay(values: Sequence[float], cfg: LoopConfig = LoopConfig()) -> list[Decision | None]:
    """Pure decision replay: None for the baseline, then one decision per value until halt."""
    out: list[Decision | None] = []
    best = math.inf
    rejects = 0
    for i, v in enumerate(values):
        if i >= cfg.max_iterations or (i > 0 and rejects >= cfg.patience):
            break
        if i == 0:
            out.append(None)
            best = v
            continue
        d = decide(v, best)
        out.append(d)
        if d is Decision.ACCEPT:
            best, rejects = v, 0
        else:
            rejects += 1
    return out


__all__ = [
    "BackendEvaluator", "Decision", "Evaluation", "Evaluator", "ExperimentLog", "IterationRecord",
    "LoopConfig", "LoopState", "ReplayEvaluator", "decide", "install_best", "record_evaluation",
    "replay", "report_markdown", "run_iteration", "run_loop", "write_report",
]
