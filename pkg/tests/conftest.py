from __future__ import annotations

import shutil
from collections import defaultdict
from pathlib import Path

import pytest

FAKE_CMDSTAN = Path(__file__).parent / "fake_cmdstan"

# criterion number -> list of (title, status, detail)
_criteria: dict[int, list[tuple[str, str, str]]] = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.fixture
def fake_cmdstan(tmp_path_factory) -> Path:
    """A throwaway CmdStan-shaped tree whose 'models' are Python scripts."""
    root = tmp_path_factory.mktemp("cmdstan")
    for f in FAKE_CMDSTAN.iterdir():
        if f.is_file():
            shutil.copy(f, root / f.name)
    return root


@pytest.fixture
def hier_small():
    from stanloop import datagen

    return datagen.generate(datagen.preset("hierarchical-small", seed=0))


@pytest.fixture
def workspace(tmp_path, hier_small):
    from stanloop.workspace import init_workspace

    return init_workspace(hier_small, tmp_path / "ws")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        if rep.skipped:
            status = "SKIP"
            detail = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else str(rep.longrepr)
        else:
            status = "PASS" if rep.passed else "FAIL"
            detail = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
        _criteria[number].append((title, status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        parts = _criteria[number]
        statuses = {s for _, s, _ in parts}
        status = "FAIL" if "FAIL" in statuses else ("SKIP" if "SKIP" in statuses else "PASS")
        details = " | ".join(d for _, _, d in parts if d)
        terminalreporter.write_line(f"[{status}] criterion {number}: {parts[0][0]}" + (f" -- {details}" if details else ""))


def write_season(path: Path, n_teams: int = 18, seed: int = 0) -> Path:
    """Double round-robin by the circle method: 2 * (n_teams - 1) matchdays."""
    import numpy as np

    rng = np.random.default_rng(seed)
    teams = [f"T{i:02d}" for i in range(n_teams)]
    rounds = []
    order = list(range(n_teams))
    for _ in range(n_teams - 1):
        rounds.append([(order[i], order[n_teams - 1 - i]) for i in range(n_teams // 2)])
        order = [order[0], order[-1]] + order[1:-1]
    rounds += [[(a, h) for h, a in r] for r in rounds]
    lines = ["home_team_id,away_team_id,home_goals,away_goals,matchday"]
    for md, matches in enumerate(rounds, start=1):
        for h, a in matches:
            lines.append(f"{teams[h]},{teams[a]},{rng.poisson(1.6)},{rng.poisson(1.2)},{md}")
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def season_csv(tmp_path) -> Path:
    return write_season(tmp_path / "season.csv")
