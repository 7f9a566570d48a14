from __future__ import annotations

import json
import os
import shutil
import stat
import sys
import tempfile
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stanloop.datagen import load_emitted
from stanloop.errors import WorkspaceError
from stanloop.proposer import ExternalProposer, ProposerContext
from stanloop.workspace import (
    PROTECTED_MODE,
    SnapshotStore,
    content_hash,
    init_workspace,
    open_workspace,
    protected_access,
    verify_protection,
)

as_root = hasattr(os, "geteuid") and os.geteuid() == 0
posix_only = pytest.mark.skipif(os.name != "posix", reason="needs POSIX file modes")


@pytest.fixture
def open_dir():
    """A world-traversable directory, so an unprivileged probe sees file modes rather than a locked parent."""
    d = Path(tempfile.mkdtemp(prefix="stanloop-ws-"))
    d.chmod(0o755)
    yield d
    for p in d.rglob("*"):
        if not p.is_symlink():
            p.chmod(0o700 if p.is_dir() else 0o600)
    shutil.rmtree(d)


def _mode(p: Path) -> int:
    return stat.S_IMODE(p.stat().st_mode)


def test_layout(workspace):
    root = workspace.root
    for rel in ("program.md", "datasets/hierarchical_small/train.csv", "datasets/hierarchical_small/dataset.md",
                "results/hierarchical_small/snapshots"):
        assert (root / rel).exists(), rel
    assert workspace.log_path == root / "results/hierarchical_small/log.jsonl"
    assert [p.name for p in workspace.protected_files] == ["test.csv", "oracle.json"]
    assert workspace.relative(workspace.train_csv) == "datasets/hierarchical_small/train.csv"


@posix_only
def test_protected_files_are_mode_000(workspace):
    assert workspace.enforced
    for p in workspace.protected_files:
        assert _mode(p) == PROTECTED_MODE


def test_reinit_is_idempotent(tmp_path, hier_small):
    a = init_workspace(hier_small, tmp_path / "ws")
    before = {p: p.read_bytes() for p in a.root.rglob("*") if p.is_file() and p.parent != a.protected_dir}
    b = init_workspace(hier_small, tmp_path / "ws")
    after = {p: p.read_bytes() for p in b.root.rglob("*") if p.is_file() and p.parent != b.protected_dir}
    assert before == after and b.enforced == a.enforced


def test_open_workspace(workspace, tmp_path):
    again = open_workspace(workspace.root, workspace.name)
    assert again.enforced == workspace.enforced
    with pytest.raises(WorkspaceError, match="gen-data"):
        open_workspace(workspace.root, "nope")


@posix_only
def test_protected_access_restores_mode(workspace, hier_small):
    with protected_access(workspace) as pdir:
        assert all(_mode(p) == 0o400 for p in workspace.protected_files)
        assert pdir == workspace.protected_dir
        back = load_emitted(workspace.dataset_dir)
    assert all(_mode(p) == PROTECTED_MODE for p in workspace.protected_files)
    assert back.test["effect"].tolist() == hier_small.test["effect"].tolist()


@posix_only
def test_protected_access_restores_mode_on_error(workspace):
    with pytest.raises(RuntimeError):
        with protected_access(workspace):
            raise RuntimeError("boom")
    assert all(_mode(p) == PROTECTED_MODE for p in workspace.protected_files)


def test_no_protect_flag(tmp_path, hier_small):
    layout = init_workspace(hier_small, tmp_path / "ws", protect=False)
    assert not layout.enforced
    assert all(_mode(p) != PROTECTED_MODE for p in layout.protected_files)


@posix_only
def test_verify_protection_denied(open_dir, hier_small):
    layout = init_workspace(hier_small, open_dir)
    report = verify_protection(layout)
    assert report.enforced, report.lines()
    assert [e.status for e in report.entries] == ["denied", "denied"]


@posix_only
def test_verify_protection_flags_readable(open_dir, hier_small):
    layout = init_workspace(hier_small, open_dir)
    for d in (open_dir / "datasets", layout.dataset_dir, layout.protected_dir):
        d.chmod(0o755)
    layout.protected_files[0].chmod(0o644)
    report = verify_protection(layout)
    assert not report.enforced
    first = report.entries[0]
    assert first.status == "readable" and first.tampered and first.mode == "644"
    assert "TAMPERED" in report.lines()[0]
    assert report.entries[1].status == "denied"


@posix_only
def test_verify_protection_missing(workspace):
    workspace.protected_files[1].unlink()
    report = verify_protection(workspace)
    assert [e.status for e in report.problems] == ["missing"]


@posix_only
@pytest.mark.skipif(not as_root, reason="unprivileged proposer mode only applies when the harness runs as root")
def test_unprivileged_proposer_cannot_read_protected_data(open_dir, hier_small):
    layout = init_workspace(hier_small, open_dir)
    for d in (open_dir / "datasets", layout.dataset_dir, layout.protected_dir):
        d.chmod(0o755)
    stub = open_dir / "peek.py"
    stub.write_text(
        "import json, sys\n"
        "sys.stdin.read()\n"
        "try:\n"
        "    open(sys.argv[1]).read(1)\n"
        "    seen = 'read'\n"
        "except PermissionError:\n"
        "    seen = 'denied'\n"
        "print(json.dumps({'model_text': 'model {}', 'notes': seen}))\n"
    )
    stub.chmod(0o644)
    ctx = ProposerContext("descriptor")
    argv = [sys.executable, str(stub), str(layout.protected_files[0])]
    assert ExternalProposer(argv, cwd=open_dir, unprivileged=True).propose(ctx).notes == "denied"
    # the same child with root privileges would get through, which is why the flag exists
    assert ExternalProposer(argv, cwd=open_dir).propose(ctx).notes == "read"


# --- snapshots --------------------------------------------------------------------------------


def test_snapshot_store(tmp_path):
    store = SnapshotStore(tmp_path / "snaps")
    h1 = store.put(b"model {}\n")
    h2 = store.put(b"model {}\n")
    assert h1 == h2 == content_hash(b"model {}\n")
    assert len(list((tmp_path / "snaps").iterdir())) == 1
    assert h1 in store and store.get(h1) == b"model {}\n"
    assert store.text("0" * 64) is None
    with pytest.raises(WorkspaceError, match="unknown snapshot"):
        store.get("0" * 64)


def test_snapshot_missing_file(tmp_path):
    with pytest.raises(WorkspaceError, match="missing"):
        SnapshotStore(tmp_path).snapshot(tmp_path / "model.stan")


def test_restore_leaves_no_temp_files(tmp_path):
    store = SnapshotStore(tmp_path / "snaps")
    model = tmp_path / "model.stan"
    model.write_text("old")
    store.restore(store.put(b"new"), model)
    assert model.read_bytes() == b"new"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["model.stan", "snaps"]


@settings(max_examples=200)
@given(st.binary(max_size=2000), st.binary(max_size=2000))
def test_snapshot_restore_is_byte_exact(first, second):
    with tempfile.TemporaryDirectory() as d:
        d = Path(d)
        store = SnapshotStore(d / "snaps")
        model = d / "model.stan"
        model.write_bytes(first)
        digest = store.snapshot(model)
        model.write_bytes(second)
        store.restore(digest, model)
        assert model.read_bytes() == first


def test_oracle_stays_behind_protection(workspace, hier_small):
    leaks = [repr(float(v)) for v in hier_small.test["effect"][:5]] + [repr(hier_small.oracle["oracle_nlpd"])]
    assert "evaluate hierarchical_small" in workspace.descriptor.read_text()
    public = [p for p in workspace.root.rglob("*") if p.is_file() and p.parent != workspace.protected_dir]
    assert public
    for p in public:
        text = p.read_text(errors="replace")
        assert "oracle_nlpd" not in text, p
        assert not [v for v in leaks if v in text], p
