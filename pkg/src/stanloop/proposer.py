"""Sources of candidate models: scripted fixture sequences and external agent processes.

External proposers speak a one-shot JSON protocol. The harness writes a single
request document to the child's stdin::

    {"dataset_md": str, "history": [record, ...], "current_model": str, "last_summary": str}

and reads a single response document from its stdout::

    {"model_text": str, "notes": str, "rationale": str, "stop": bool}
"""

from __future__ import annotations

import json
import logging
import os
import subprocess
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Any, Mapping, Protocol, Sequence

from .backend.base import ModelSource
from .errors import InvalidInputError, ProposerError

if TYPE_CHECKING:
    from .loop import IterationRecord

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 600.0
_OUTPUT_TAIL = 4000


@dataclass(frozen=True)
class Proposal:
    model_text: str = ""
    notes: str = ""
    rationale: str = ""
    stop: bool = False

    def __post_init__(self) -> None:
        if not self.stop and not self.model_text.strip():
            raise ProposerError("proposal has an empty model and does not signal stop")

    @property
    def model(self) -> ModelSource | None:
        return ModelSource(self.model_text) if self.model_text.strip() else None

    def to_dict(self) -> dict[str, Any]:
        return {"model_text": self.model_text, "notes": self.notes, "rationale": self.rationale, "stop": self.stop}

    @classmethod
    def from_dict(cls, d: Any) -> "Proposal":
        if not isinstance(d, Mapping):
            raise ProposerError(f"response must be a JSON object, got {type(d).__name__}")
        stop = d.get("stop", False)
        if not isinstance(stop, bool):
            raise ProposerError("'stop' must be a boolean")
        fields = {}
        for key in ("model_text", "notes", "rationale"):
            value = d.get(key, "")
            if value is None:
                value = ""
            if not isinstance(value, str):
                raise ProposerError(f"'{key}' must be a string")
            fields[key] = value
        if not stop and "model_text" not in d:
            raise ProposerError("response lacks 'model_text'")
        return cls(stop=stop, **fields)


@dataclass(frozen=True)
class ProposerContext:
    dataset_md: str
    history: tuple["IterationRecord", ...] = ()
    current_model: str = ""
    last_summary: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset_md": self.dataset_md,
            "history": [r.to_dict() for r in self.history],
            "current_model": self.current_model,
            "last_summary": self.last_summary,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, allow_nan=False)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ProposerContext":
        from .loop import IterationRecord

        return cls(
            dataset_md=d["dataset_md"],
            history=tuple(IterationRecord.from_dict(r) for r in d.get("history", [])),
            current_model=d.get("current_model", ""),
            last_summary=d.get("last_summary", ""),
        )

    @classmethod
    def from_json(cls, text: str) -> "ProposerContext":
        return cls.from_dict(json.loads(text))


class Proposer(Protocol):
    def propose(self, ctx: ProposerContext) -> Proposal: ...


# --- scripted ---------------------------------------------------------------------------

ScriptEntry = "str | Proposal"


def _as_proposal(entry: str | Proposal) -> Proposal:
    return entry if isinstance(entry, Proposal) else Proposal(model_text=entry)


def scripted_next(script: Sequence[str | Proposal], index: int) -> Proposal:
    """The ``index``-th proposal of ``script``; stop once it is exhausted."""
    if index < 0:
        raise InvalidInputError("index must be >= 0")
    if index >= len(script):
        return Proposal(stop=True, notes="script exhausted")
    return _as_proposal(script[index])


class ScriptedProposer:
    """Replays a fixed sequence of models, ignoring the context."""

    def __init__(self, script: Sequence[str | Proposal]):
        self.script = list(script)
        self.calls = 0

    def propose(self, ctx: ProposerContext) -> Proposal:
        proposal = scripted_next(self.script, self.calls)
        self.calls += 1
        return proposal


# --- external process -------------------------------------------------------------------


def _tail(text: str) -> str:
    return text if len(text) <= _OUTPUT_TAIL else "...\n" + text[-_OUTPUT_TAIL:]


def _decode(data: bytes | str | None) -> str:
    if data is None:
        return ""
    return data.decode("utf-8", errors="replace") if isinstance(data, bytes) else data


class ExternalProposer:
    """Delegates to a child process over the stdin/stdout JSON protocol.

    With ``unprivileged=True`` and a root harness, the child runs as ``nobody``
    so file modes keep it away from protected data.
    """

    def __init__(
        self,
        argv: Sequence[str],
        timeout_s: float | None = DEFAULT_TIMEOUT_S,
        cwd: str | os.PathLike | None = None,
        unprivileged: bool = False,
    ):
        if not argv:
            raise InvalidInputError("external proposer command is empty")
        self.argv = list(argv)
        self.timeout_s = timeout_s
        self.cwd = cwd
        self.unprivileged = unprivileged

    def _run(self, stdin: bytes) -> subprocess.CompletedProcess:
        kwargs: dict[str, Any] = {}
        if self.unprivileged:
            from .workspace import unprivileged_subprocess_kwargs

            kwargs = unprivileged_subprocess_kwargs()
        try:
            return subprocess.run(
                self.argv, input=stdin, capture_output=True, timeout=self.timeout_s, cwd=self.cwd, **kwargs
            )
        except subprocess.TimeoutExpired as exc:
            raise ProposerError(
                f"proposer {self.argv[0]!r} timed out after {self.timeout_s}s",
                _tail(_decode(exc.stderr) + _decode(exc.stdout)),
            ) from None
        except OSError as exc:
            raise ProposerError(f"cannot start proposer {self.argv[0]!r}: {exc}") from None

    def propose(self, ctx: ProposerContext) -> Proposal:
        proc = self._run(ctx.to_json().encode("utf-8"))
        stdout, stderr = _decode(proc.stdout), _decode(proc.stderr)
        if proc.returncode != 0:
            raise ProposerError(f"proposer {self.argv[0]!r} exited with status {proc.returncode}", _tail(stderr or stdout))
        try:
            doc = json.loads(stdout)
        except json.JSONDecodeError as exc:
            raise ProposerError(f"proposer {self.argv[0]!r} wrote malformed JSON: {exc}", _tail(stdout + stderr)) from None
        return Proposal.from_dict(doc)


class WorkspaceProposer:
    """File-editing agents: run a command in the workspace, then re-read ``model.stan``.

    The command may leave ``proposal.json`` next to the model with ``notes``,
    ``rationale`` and ``stop``; it is consumed after each call.
    """

    SIDE_FILE = "proposal.json"

    def __init__(self, argv: Sequence[str], root: str | os.PathLike, timeout_s: float | None = DEFAULT_TIMEOUT_S):
        if not argv:
            raise InvalidInputError("workspace proposer command is empty")
        self.argv = list(argv)
        self.root = Path(root)
        self.timeout_s = timeout_s

    def propose(self, ctx: ProposerContext) -> Proposal:
        from .workspace import MODEL_FILE

        side = self.root / self.SIDE_FILE
        side.unlink(missing_ok=True)
        try:
            proc = subprocess.run(self.argv, capture_output=True, timeout=self.timeout_s, cwd=self.root)
        except subprocess.TimeoutExpired as exc:
            raise ProposerError(f"proposer {self.argv[0]!r} timed out after {self.timeout_s}s",
                                _tail(_decode(exc.stderr))) from None
        except OSError as exc:
            raise ProposerError(f"cannot start proposer {self.argv[0]!r}: {exc}") from None
        if proc.returncode != 0:
            raise ProposerError(f"proposer {self.argv[0]!r} exited with status {proc.returncode}",
                                _tail(_decode(proc.stderr) or _decode(proc.stdout)))
        meta: dict[str, Any] = {}
        if side.exists():
            try:
                meta = json.loads(side.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ProposerError(f"{self.SIDE_FILE} is malformed: {exc}") from None
            finally:
                side.unlink(missing_ok=True)
        model_path = self.root / MODEL_FILE
        text = model_path.read_text(encoding="utf-8") if model_path.exists() else ""
        return Proposal.from_dict({**meta, "model_text": text})


# --- fixtures ---------------------------------------------------------------------------


def fixture_models() -> dict[str, str]:
    """Shipped Stan programs keyed by file stem."""
    root = resources.files("stanloop.models")
    return {
        entry.name[: -len(".stan")]: entry.read_text(encoding="utf-8")
        for entry in sorted(root.iterdir(), key=lambda e: e.name)
        if entry.name.endswith(".stan")
    }


@dataclass(frozen=True)
class FixtureStep:
    model: str
    notes: str
    rationale: str


# Accepted spine of the large 1D regression run, plus per-dataset sequences.
FIXTURE_SETS: dict[str, tuple[FixtureStep, ...]] = {
    "regression-spine": (
        FixtureStep("regression_linear_gaussian", "baseline: linear mean, Gaussian noise", "simplest reasonable start"),
        FixtureStep("regression_cubic_student_t", "cubic mean, Student-t noise", "curvature in the mean and heavy-tailed residuals"),
        FixtureStep("regression_sine_student_t", "sine basis at fixed frequency plus linear trend", "mean looks periodic"),
        FixtureStep("regression_sine_quadratic_logsigma", "quadratic log scale", "residual spread changes with x"),
        FixtureStep("regression_mixture_fixed_sigma_out", "contamination mixture, outlier scale fixed at 10",
                    "a few gross outliers; fixing the wide scale avoids label switching"),
        FixtureStep("regression_mixture_cubic_logsigma", "cubic log scale in the mixture", "spread profile is not symmetric"),
    ),
    "regression-learned-omega": (
        FixtureStep("regression_linear_gaussian", "baseline: linear mean, Gaussian noise", "simplest reasonable start"),
        FixtureStep("regression_sine_quadratic_logsigma", "fixed-frequency sine mean, quadratic log scale", "periodic mean, varying spread"),
        FixtureStep("regression_sine_learned_omega", "learn the frequency", "the fixed frequency may be off"),
    ),
    "hier-small": (
        FixtureStep("hierarchical_centered", "centered partial pooling", "groups share a population distribution"),
        FixtureStep("hierarchical_non_centered", "non-centered parameterization", "better geometry when groups are small"),
        FixtureStep("hierarchical_student_t", "Student-t noise", "guard against heavy tails"),
        FixtureStep("hierarchical_group_sigma", "group-specific noise scale", "groups may differ in spread"),
    ),
    "varying-slopes": (
        FixtureStep("varying_slopes_pooled", "baseline: fully pooled regression", "simplest reasonable start"),
        FixtureStep("varying_slopes_correlated", "correlated varying intercepts and slopes", "units differ in both level and trend"),
    ),
    "soccer": (
        FixtureStep("soccer_poisson", "baseline: Poisson attack and defense strengths", "standard goal model"),
        FixtureStep("soccer_poisson_hierarchical", "shrink strengths with learned scales", "few matches per team"),
    ),
}


def fixture_script(name: str) -> list[Proposal]:
    if name not in FIXTURE_SETS:
        raise InvalidInputError(f"unknown fixture set {name!r}; choose from {', '.join(sorted(FIXTURE_SETS))}")
    catalog = fixture_models()
    return [Proposal(catalog[s.model], s.notes, s.rationale) for s in FIXTURE_SETS[name]]


# --- recorded trajectories --------------------------------------------------------------


@dataclass(frozen=True)
class TrajectoryEntry:
    nlpd: float
    expected: str  # "baseline" | "accept" | "revert"
    notes: str
    comment: str = ""


@dataclass(frozen=True)
class Trajectory:
    name: str
    dataset: str
    entries: tuple[TrajectoryEntry, ...] = field(default_factory=tuple)

    @property
    def values(self) -> list[float]:
        return [e.nlpd for e in self.entries]

    def script(self) -> list[Proposal]:
        """Distinct placeholder models, one per step, so each step has its own hash."""
        return [
            Proposal(f"// {self.name} step {i}: {e.notes}\n", e.notes, f"replayed from the {self.name} trajectory")
            for i, e in enumerate(self.entries)
        ]


def trajectories() -> dict[str, Trajectory]:
    raw = json.loads(resources.files("stanloop.assets").joinpath("trajectories.json").read_text(encoding="utf-8"))
    return {
        name: Trajectory(name, d["dataset"], tuple(TrajectoryEntry(**e) for e in d["entries"]))
        for name, d in raw.items()
    }


def trajectory(name: str) -> Trajectory:
    table = trajectories()
    if name not in table:
        raise InvalidInputError(f"unknown trajectory {name!r}; choose from {', '.join(sorted(table))}")
    return table[name]
