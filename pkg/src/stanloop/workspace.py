"""Experiment directory layout, protection of held-out data, and model snapshots.

::

    <root>/
      model.stan                        working model the proposer edits
      program.md                        proposer instructions
      datasets/<name>/train.csv
      datasets/<name>/dataset.md
      datasets/<name>/protected/        test.csv, oracle.json  (mode 000)
      results/<name>/log.jsonl
      results/<name>/report.md
      results/<name>/snapshots/<sha256>.stan

Protection relies on POSIX permission bits. The harness opens protected files
only through :func:`protected_access`, which lifts the owner read bit for the
duration of the read.
"""

from __future__ import annotations

import contextlib
import hashlib
import logging
import os
import stat
import subprocess
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .errors import WorkspaceError

log = logging.getLogger(__name__)

MODEL_FILE = "model.stan"
PROTECTED_MODE = 0o000
_NOBODY_UID = 65534


class ProtectionAdvisoryWarning(UserWarning):
    """File modes could not be enforced; protection is advisory only."""


def atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(f".{path.name}.tmp-{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


@dataclass(frozen=True)
class WorkspaceLayout:
    root: Path
    name: str
    enforced: bool = True

    @property
    def dataset_dir(self) -> Path:
        return self.root / "datasets" / self.name

    @property
    def train_csv(self) -> Path:
        return self.dataset_dir / "train.csv"

    @property
    def descriptor(self) -> Path:
        return self.dataset_dir / "dataset.md"

    @property
    def protected_dir(self) -> Path:
        return self.dataset_dir / "protected"

    @property
    def protected_files(self) -> list[Path]:
        return [self.protected_dir / "test.csv", self.protected_dir / "oracle.json"]

    @property
    def results_dir(self) -> Path:
        return self.root / "results" / self.name

    @property
    def log_path(self) -> Path:
        return self.results_dir / "log.jsonl"

    @property
    def report_path(self) -> Path:
        return self.results_dir / "report.md"

    @property
    def snapshots_dir(self) -> Path:
        return self.results_dir / "snapshots"

    @property
    def model_file(self) -> Path:
        return self.root / MODEL_FILE

    @property
    def program_file(self) -> Path:
        return self.root / "program.md"

    def snapshots(self) -> "SnapshotStore":
        return SnapshotStore(self.snapshots_dir)

    def relative(self, path: Path) -> str:
        return path.relative_to(self.root).as_posix()


def _posix_modes_supported() -> bool:
    return os.name == "posix"


def _protect(paths: list[Path]) -> bool:
    if not _posix_modes_supported():
        return False
    try:
        for p in paths:
            os.chmod(p, PROTECTED_MODE)
            if stat.S_IMODE(p.stat().st_mode) != PROTECTED_MODE:
                return False
    except OSError as exc:
        log.warning("chmod failed: %s", exc)
        return False
    return True


def _unprotect(paths: list[Path], mode: int = 0o600) -> None:
    for p in paths:
        if p.exists():
            with contextlib.suppress(OSError):
                os.chmod(p, mode)


def _warn_advisory(root: Path) -> None:
    msg = (
        f"WARNING: file permissions could not be enforced under {root}; "
        "held-out data is protected by convention only (advisory mode)"
    )
    log.warning(msg)
    warnings.warn(msg, ProtectionAdvisoryWarning, stacklevel=3)


def init_workspace(dataset, root: str | os.PathLike, name: str | None = None, protect: bool = True) -> WorkspaceLayout:
    """Materialize the tree for ``dataset`` under ``root``; safe to repeat."""
    from . import assets
    from .datagen import emit_dataset

    root = Path(root)
    name = name or dataset.name
    layout = WorkspaceLayout(root, name)
    _unprotect(layout.protected_files)
    root.mkdir(parents=True, exist_ok=True)
    cmd = f'stanloop --root . evaluate {name} --notes "..." --rationale "..."'
    emit_dataset(dataset, layout.dataset_dir, evaluate_command=cmd)
    layout.snapshots_dir.mkdir(parents=True, exist_ok=True)
    program = assets.program_text()
    if not layout.program_file.exists() or layout.program_file.read_text(encoding="utf-8") != program:
        layout.program_file.write_text(program, encoding="utf-8", newline="\n")
    enforced = _protect(layout.protected_files) if protect else False
    if protect and not enforced:
        _warn_advisory(root)
    return WorkspaceLayout(root, name, enforced)


def open_workspace(root: str | os.PathLike, name: str) -> WorkspaceLayout:
    layout = WorkspaceLayout(Path(root), name)
    if not layout.dataset_dir.is_dir():
        raise WorkspaceError(f"no dataset {name!r} under {layout.root / 'datasets'}; run gen-data first")
    enforced = _posix_modes_supported() and all(
        p.exists() and stat.S_IMODE(p.stat().st_mode) == PROTECTED_MODE for p in layout.protected_files
    )
    return WorkspaceLayout(layout.root, name, enforced)


@contextlib.contextmanager
def protected_access(layout: WorkspaceLayout) -> Iterator[Path]:
    """Harness-only window during which protected files are owner-readable."""
    files = [p for p in layout.protected_files if p.exists()]
    before = {p: stat.S_IMODE(p.stat().st_mode) for p in files}
    try:
        _unprotect(files, 0o400)
        yield layout.protected_dir
    finally:
        for p, mode in before.items():
            with contextlib.suppress(OSError):
                os.chmod(p, mode)


# --- verification ---------------------------------------------------------------------


@dataclass(frozen=True)
class ProtectionEntry:
    path: str
    status: str  # "denied" | "readable" | "advisory-only" | "missing"
    mode: str
    tampered: bool


@dataclass(frozen=True)
class ProtectionReport:
    entries: list[ProtectionEntry] = field(default_factory=list)

    @property
    def enforced(self) -> bool:
        return bool(self.entries) and all(e.status == "denied" and not e.tampered for e in self.entries)

    @property
    def problems(self) -> list[ProtectionEntry]:
        return [e for e in self.entries if e.status != "denied" or e.tampered]

    def lines(self) -> list[str]:
        out = []
        for e in self.entries:
            flag = " TAMPERED (mode should be 000)" if e.tampered else ""
            out.append(f"{e.path}: {e.status} [mode {e.mode}]{flag}")
        return out


def _unprivileged_kwargs() -> dict:
    if hasattr(os, "geteuid") and os.geteuid() == 0:
        try:
            import pwd

            uid = pwd.getpwnam("nobody").pw_uid
        except (ImportError, KeyError):
            uid = _NOBODY_UID
        return {"user": uid, "group": uid, "extra_groups": []}
    return {}


def unprivileged_subprocess_kwargs() -> dict:
    """Keyword arguments that run a child without the harness's root privileges."""
    return _unprivileged_kwargs()


def _probe_readable(path: Path) -> bool:
    code = "import sys\nwith open(sys.argv[1], 'rb') as f:\n    f.read(1)\n"
    proc = subprocess.run(
        [sys.executable, "-c", code, str(path)],
        capture_output=True,
        cwd="/",
        **_unprivileged_kwargs(),
    )
    return proc.returncode == 0


def verify_protection(layout: WorkspaceLayout) -> ProtectionReport:
    """Try to read each protected file from an unprivileged child process."""
    entries = []
    posix = _posix_modes_supported()
    for p in layout.protected_files:
        rel = layout.relative(p)
        if not p.exists():
            entries.append(ProtectionEntry(rel, "missing", "---", True))
            continue
        mode = stat.S_IMODE(p.stat().st_mode)
        if not posix:
            entries.append(ProtectionEntry(rel, "advisory-only", f"{mode:03o}", False))
            continue
        status = "readable" if _probe_readable(p) else "denied"
        entries.append(ProtectionEntry(rel, status, f"{mode:03o}", mode != PROTECTED_MODE))
    return ProtectionReport(entries)


# --- snapshots ------------------------------------------------------------------------


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class SnapshotStore:
    """Content-addressed copies of model files."""

    def __init__(self, directory: str | os.PathLike):
        self.dir = Path(directory)

    def path_for(self, digest: str) -> Path:
        return self.dir / f"{digest}.stan"

    def put(self, data: bytes) -> str:
        digest = content_hash(data)
        target = self.path_for(digest)
        if not target.exists():
            self.dir.mkdir(parents=True, exist_ok=True)
            atomic_write_bytes(target, data)
        return digest

    def snapshot(self, model_file: str | os.PathLike) -> str:
        path = Path(model_file)
        if not path.exists():
            raise WorkspaceError(f"cannot snapshot missing model file {path}")
        return self.put(path.read_bytes())

    def get(self, digest: str) -> bytes:
        target = self.path_for(digest)
        if not target.exists():
            raise WorkspaceError(f"unknown snapshot {digest}")
        return target.read_bytes()

    def text(self, digest: str) -> str | None:
        try:
            return self.get(digest).decode("utf-8", errors="replace")
        except WorkspaceError:
            return None

    def restore(self, digest: str, model_file: str | os.PathLike) -> None:
        atomic_write_bytes(Path(model_file), self.get(digest))

    def __contains__(self, digest: str) -> bool:
        return self.path_for(digest).exists()
