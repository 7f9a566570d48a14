"""Seeded synthetic datasets with known generative processes, plus the soccer loader.

Randomness: every dataset draws from PCG64 generators derived from
``SeedSequence(seed, spawn_key=(k,))``, one independent stream per column
role. The stream index ``k`` of each role is fixed in ``_STREAMS`` so a
given (spec, seed) reproduces bit-for-bit on any platform numpy supports.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .backend.io import format_real
from .errors import InvalidInputError, ParseError
from .scoring import OracleRegressionParams, gaussian_nll

__all__ = [
    "DatasetSpec",
    "GeneratedDataset",
    "PRESETS",
    "StanVar",
    "emit_dataset",
    "generate",
    "gen_hierarchical",
    "gen_regression_1d",
    "gen_varying_slopes",
    "load_soccer",
    "preset",
    "recompute_oracle_nlpd",
]

KINDS = ("regression_1d", "hierarchical", "varying_slopes", "soccer")

_STREAMS = {
    "regression_1d": ("x_train", "noise_train", "contamination", "x_test", "noise_test"),
    "hierarchical": ("group_effects", "noise_train", "noise_test"),
    "varying_slopes": ("intercepts", "slopes", "x", "noise"),
}

N_TEAMS = 18
N_MATCHDAYS = 34


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    seed: int = 0
    name: str | None = None
    # regression_1d
    n_train: int = 500
    n_test: int = 200
    contamination_rate: float = 0.06
    contamination_magnitude_range: tuple[float, float] = (10.0, 15.0)
    x_range: tuple[float, float] = (0.0, 6.0)
    # hierarchical / varying_slopes: n_per_group train rows and
    # n_test_per_group test rows per group
    n_groups: int = 20
    n_per_group: int = 8
    n_test_per_group: int = 2
    group_mean: float = 0.0
    group_sd: float = 1.0
    noise_sd: float = 1.0
    intercept_mean: float = 2.0
    intercept_sd: float = 1.0
    slope_mean: float = -0.5
    slope_sd: float = 0.7
    # soccer
    split_matchday: int = 23
    csv_path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown dataset kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "regression_1d":
            if self.n_train < 1 or self.n_test < 1:
                raise InvalidInputError("n_train and n_test must be positive")
            if not 0.0 <= self.contamination_rate < 1.0:
                raise InvalidInputError("contamination_rate must lie in [0, 1)")
            lo, hi = self.contamination_magnitude_range
            if not 0 <= lo <= hi:
                raise InvalidInputError("contamination magnitude range must satisfy 0 <= low <= high")
            if not self.x_range[0] < self.x_range[1]:
                raise InvalidInputError("x_range must be increasing")
        elif self.kind in ("hierarchical", "varying_slopes"):
            if self.n_groups < 1 or self.n_per_group < 1 or self.n_test_per_group < 1:
                raise InvalidInputError("group counts must be positive")
            if self.group_sd < 0 or self.intercept_sd < 0 or self.slope_sd < 0 or self.noise_sd <= 0:
                raise InvalidInputError("scales must be non-negative (noise_sd positive)")
        elif self.kind == "soccer":
            if not 1 <= self.split_matchday < N_MATCHDAYS:
                raise InvalidInputError(f"split_matchday must lie in [1, {N_MATCHDAYS})")

    @property
    def dataset_name(self) -> str:
        return self.name or self.kind


PRESETS: dict[str, DatasetSpec] = {
    "regression-1d-large": DatasetSpec("regression_1d", n_train=500, n_test=200, name="regression_1d_large"),
    "regression-1d-small": DatasetSpec("regression_1d", n_train=68, n_test=30, name="regression_1d_small"),
    "hierarchical-small": DatasetSpec("hierarchical", n_groups=20, n_per_group=8, n_test_per_group=2,
                                      name="hierarchical_small"),
    "hierarchical-large": DatasetSpec("hierarchical", n_groups=20, n_per_group=40, n_test_per_group=10,
                                      name="hierarchical_large"),
    "varying-slopes": DatasetSpec("varying_slopes", n_groups=15, n_per_group=20, n_test_per_group=5,
                                  noise_sd=0.8, x_range=(-3.0, 3.0), name="varying_slopes"),
    "soccer": DatasetSpec("soccer", split_matchday=23, name="bundesliga"),
}


def preset(key: str, **overrides: Any) -> DatasetSpec:
    try:
        base = PRESETS[key]
    except KeyError:
        raise InvalidInputError(f"unknown dataset {key!r}; known: {', '.join(PRESETS)}") from None
    return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class StanVar:
    """One entry of the data block the evaluator passes to the model."""

    name: str
    decl: str
    kind: str  # "int" | "real"


@dataclass
class GeneratedDataset:
    spec: DatasetSpec
    train: dict[str, np.ndarray]
    test: dict[str, np.ndarray]
    column_docs: dict[str, str]
    target: str
    oracle: dict[str, Any] | None
    overview: str
    extra_data: dict[str, int] = field(default_factory=dict)
    extra_tables: dict[str, list[dict[str, Any]]] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.spec.dataset_name

    @property
    def n_train(self) -> int:
        return len(next(iter(self.train.values())))

    @property
    def n_test(self) -> int:
        return len(next(iter(self.test.values())))

    def interface(self) -> list[StanVar]:
        out = [
            StanVar("N_train", "int<lower=0> N_train;", "int"),
            StanVar("N_test", "int<lower=0> N_test;", "int"),
        ]
        for key in self.extra_data:
            out.append(StanVar(key, f"int<lower=1> {key};", "int"))
        bounds = {"unit": "J", "home_team": "N_teams", "away_team": "N_teams"}
        for col, values in self.train.items():
            if col == "matchday":
                continue
            for split in ("train", "test"):
                size = f"N_{split}"
                name = f"{col}_{split}"
                if np.issubdtype(values.dtype, np.integer):
                    if col in bounds:
                        decl = f"array[{size}] int<lower=1, upper={bounds[col]}> {name};"
                    else:
                        decl = f"array[{size}] int<lower=0> {name};"
                    out.append(StanVar(name, decl, "int"))
                else:
                    out.append(StanVar(name, f"vector[{size}] {name};", "real"))
        return out

    def stan_data(self) -> dict[str, Any]:
        data: dict[str, Any] = {"N_train": self.n_train, "N_test": self.n_test, **self.extra_data}
        for col in self.train:
            if col == "matchday":
                continue
            data[f"{col}_train"] = self.train[col]
            data[f"{col}_test"] = self.test[col]
        return data

    def stan_schema(self) -> dict[str, str]:
        return {v.name: v.kind for v in self.interface()}


def _streams(seed: int, kind: str) -> dict[str, np.random.Generator]:
    return {
        role: np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(k,))))
        for k, role in enumerate(_STREAMS[kind])
    }


def _n_contaminated(rate: float, n: int) -> int:
    # round half up; Python's round() is banker's rounding
    return int(math.floor(rate * n + 0.5))


def gen_regression_1d(spec: DatasetSpec, params: OracleRegressionParams | None = None) -> GeneratedDataset:
    if spec.kind != "regression_1d":
        raise InvalidInputError(f"expected a regression_1d spec, got {spec.kind!r}")
    params = params or OracleRegressionParams()
    rng = _streams(spec.seed, "regression_1d")
    lo, hi = spec.x_range

    x_train = rng["x_train"].uniform(lo, hi, spec.n_train)
    y_train = params.mean(x_train) + params.sigma(x_train) * rng["noise_train"].standard_normal(spec.n_train)

    k = _n_contaminated(spec.contamination_rate, spec.n_train)
    crng = rng["contamination"]
    rows = np.sort(crng.choice(spec.n_train, size=k, replace=False)) if k else np.zeros(0, dtype=int)
    signs = crng.choice(np.array([-1.0, 1.0]), size=k)
    mags = crng.uniform(*spec.contamination_magnitude_range, size=k)
    shifts = signs * mags
    y_train[rows] += shifts

    x_test = rng["x_test"].uniform(lo, hi, spec.n_test)
    mu_test = params.mean(x_test)
    sd_test = params.sigma(x_test)
    y_test = mu_test + sd_test * rng["noise_test"].standard_normal(spec.n_test)

    oracle = {
        "kind": "regression_1d",
        "definition": "gaussian",
        "true_params": params.to_dict(),
        "x_range": list(spec.x_range),
        "contaminated_train_rows": rows.tolist(),
        "contamination_shifts": shifts.tolist(),
        "test_mean": mu_test.tolist(),
        "test_sd": sd_test.tolist(),
        "oracle_nlpd": float(np.mean(gaussian_nll(y_test, mu_test, sd_test))),
    }
    size = "Large" if spec.n_train >= 200 else "Small"
    return GeneratedDataset(
        spec=spec,
        train={"predictor": x_train, "response": y_train},
        test={"predictor": x_test, "response": y_test},
        column_docs={
            "predictor": "continuous predictor variable",
            "response": "continuous response variable (target)",
        },
        target="response",
        oracle=oracle,
        overview=(
            f"Pairs of a continuous predictor and a continuous response ({size.lower()} variant).\n"
            "Predict `response` for held-out observations."
        ),
    )


def _hier_posterior_predictive(y_train, unit_train, n_groups, prior_mean, prior_sd, noise_sd):
    """Per-group N(mean, sd) predictive given the true hyperparameters."""
    sums = np.bincount(unit_train - 1, weights=y_train, minlength=n_groups)
    counts = np.bincount(unit_train - 1, minlength=n_groups)
    if prior_sd == 0:
        post_var = np.zeros(n_groups)
        post_mean = np.full(n_groups, prior_mean)
    else:
        post_var = 1.0 / (1.0 / prior_sd**2 + counts / noise_sd**2)
        post_mean = post_var * (prior_mean / prior_sd**2 + sums / noise_sd**2)
    return post_mean, np.sqrt(noise_sd**2 + post_var)


def gen_hierarchical(spec: DatasetSpec) -> GeneratedDataset:
    if spec.kind != "hierarchical":
        raise InvalidInputError(f"expected a hierarchical spec, got {spec.kind!r}")
    rng = _streams(spec.seed, "hierarchical")
    J, n_tr, n_te = spec.n_groups, spec.n_per_group, spec.n_test_per_group
    mu = spec.group_mean + spec.group_sd * rng["group_effects"].standard_normal(J)
    unit_train = np.repeat(np.arange(1, J + 1), n_tr)
    unit_test = np.repeat(np.arange(1, J + 1), n_te)
    y_train = mu[unit_train - 1] + spec.noise_sd * rng["noise_train"].standard_normal(J * n_tr)
    y_test = mu[unit_test - 1] + spec.noise_sd * rng["noise_test"].standard_normal(J * n_te)

    known_mean = mu[unit_test - 1]
    known_sd = np.full(J * n_te, spec.noise_sd)
    pp_mean, pp_sd = _hier_posterior_predictive(
        y_train, unit_train, J, spec.group_mean, spec.group_sd, spec.noise_sd
    )
    pp_mean_t, pp_sd_t = pp_mean[unit_test - 1], pp_sd[unit_test - 1]
    nlpd_known = float(np.mean(gaussian_nll(y_test, known_mean, known_sd)))
    nlpd_pp = float(np.mean(gaussian_nll(y_test, pp_mean_t, pp_sd_t)))
    oracle = {
        "kind": "hierarchical",
        "definition": "known_group_means",
        "true_params": {
            "group_mean": spec.group_mean,
            "group_sd": spec.group_sd,
            "noise_sd": spec.noise_sd,
            "mu": mu.tolist(),
        },
        "test_mean": known_mean.tolist(),
        "test_sd": known_sd.tolist(),
        "oracle_nlpd": nlpd_known,
        "alternatives": {
            "posterior_predictive_true_hyperparameters": {
                "test_mean": pp_mean_t.tolist(),
                "test_sd": pp_sd_t.tolist(),
                "oracle_nlpd": nlpd_pp,
            }
        },
    }
    return GeneratedDataset(
        spec=spec,
        train={"unit": unit_train, "effect": y_train},
        test={"unit": unit_test, "effect": y_test},
        column_docs={
            "unit": f"integer group identifier, 1..{J}",
            "effect": "continuous measured outcome (target)",
        },
        target="effect",
        oracle=oracle,
        overview=(
            f"Continuous measurements recorded for {J} units.\n"
            "Predict `effect` for held-out observations; every held-out row belongs to a unit seen in training."
        ),
        extra_data={"J": J},
    )


def gen_varying_slopes(spec: DatasetSpec) -> GeneratedDataset:
    if spec.kind != "varying_slopes":
        raise InvalidInputError(f"expected a varying_slopes spec, got {spec.kind!r}")
    rng = _streams(spec.seed, "varying_slopes")
    J, n_tr, n_te = spec.n_groups, spec.n_per_group, spec.n_test_per_group
    per = n_tr + n_te
    alpha = spec.intercept_mean + spec.intercept_sd * rng["intercepts"].standard_normal(J)
    beta = spec.slope_mean + spec.slope_sd * rng["slopes"].standard_normal(J)
    lo, hi = spec.x_range
    x = rng["x"].uniform(lo, hi, (J, per))
    mean = alpha[:, None] + beta[:, None] * x
    y = mean + spec.noise_sd * rng["noise"].standard_normal((J, per))

    units = np.repeat(np.arange(1, J + 1), per).reshape(J, per)
    tr, te = np.s_[:, :n_tr], np.s_[:, n_tr:]
    y_test = y[te].ravel()
    mu_test = mean[te].ravel()
    sd_test = np.full(mu_test.shape, spec.noise_sd)
    oracle = {
        "kind": "varying_slopes",
        "definition": "gaussian",
        "true_params": {
            "alpha": alpha.tolist(),
            "beta": beta.tolist(),
            "sigma": spec.noise_sd,
            "intercept_mean": spec.intercept_mean,
            "intercept_sd": spec.intercept_sd,
            "slope_mean": spec.slope_mean,
            "slope_sd": spec.slope_sd,
        },
        "test_mean": mu_test.tolist(),
        "test_sd": sd_test.tolist(),
        "oracle_nlpd": float(np.mean(gaussian_nll(y_test, mu_test, sd_test))),
    }
    return GeneratedDataset(
        spec=spec,
        train={"unit": units[tr].ravel(), "predictor": x[tr].ravel(), "response": y[tr].ravel()},
        test={"unit": units[te].ravel(), "predictor": x[te].ravel(), "response": y_test},
        column_docs={
            "unit": f"integer group identifier, 1..{J}",
            "predictor": "continuous predictor variable",
            "response": "continuous response variable (target)",
        },
        target="response",
        oracle=oracle,
        overview=(
            f"A continuous predictor and a continuous response measured within {J} units.\n"
            "Predict `response` for held-out observations; every held-out row belongs to a unit seen in training."
        ),
        extra_data={"J": J},
    )


SOCCER_COLUMNS = ("home_team_id", "away_team_id", "home_goals", "away_goals", "matchday")


def _parse_int(text: str, column: str, lineno: int, path: str) -> int:
    try:
        value = int(text.strip())
    except ValueError:
        raise ParseError(f"column {column!r}: expected an integer, got {text!r}", lineno, path) from None
    return value


def load_soccer(csv_path: str | Path, split_matchday: int = 23, name: str = "bundesliga") -> GeneratedDataset:
    """Load one season of results and split it in time at ``split_matchday``."""
    spec = DatasetSpec("soccer", split_matchday=split_matchday, csv_path=str(csv_path), name=name)
    path = str(csv_path)
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in SOCCER_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"missing required column(s): {', '.join(missing)}", 1, path)
        reader.fieldnames = header
        records = []
        for lineno, row in enumerate(reader, start=2):
            home = (row["home_team_id"] or "").strip()
            away = (row["away_team_id"] or "").strip()
            if not home or not away:
                raise ParseError("empty team id", lineno, path)
            if home == away:
                raise ParseError(f"team {home!r} plays itself", lineno, path)
            hg = _parse_int(row["home_goals"] or "", "home_goals", lineno, path)
            ag = _parse_int(row["away_goals"] or "", "away_goals", lineno, path)
            md = _parse_int(row["matchday"] or "", "matchday", lineno, path)
            if hg < 0 or ag < 0:
                raise ParseError("goal counts must be non-negative", lineno, path)
            if not 1 <= md <= N_MATCHDAYS:
                raise ParseError(f"matchday {md} outside 1..{N_MATCHDAYS}", lineno, path)
            records.append((lineno, home, away, hg, ag, md))

    ids = {r[1] for r in records} | {r[2] for r in records}
    if len(ids) != N_TEAMS:
        raise ParseError(f"expected {N_TEAMS} distinct team ids, found {len(ids)}", None, path)
    ordered = sorted(ids, key=lambda s: (0, int(s), s) if s.lstrip("-").isdigit() else (1, 0, s))
    index = {team: i + 1 for i, team in enumerate(ordered)}

    train_rows = [r for r in records if r[5] <= split_matchday]
    test_rows = [r for r in records if r[5] > split_matchday]
    if not train_rows:
        raise InvalidInputError(f"no matches on or before matchday {split_matchday}: empty training set")
    if not test_rows:
        raise InvalidInputError(f"no matches after matchday {split_matchday}: empty test set")
    seen = {r[1] for r in train_rows} | {r[2] for r in train_rows}
    for r in test_rows:
        for team in (r[1], r[2]):
            if team not in seen:
                raise ParseError(f"team id {team!r} never appears in the training split", r[0], path)

    def table(rows):
        return {
            "home_team": np.array([index[r[1]] for r in rows], dtype=np.int64),
            "away_team": np.array([index[r[2]] for r in rows], dtype=np.int64),
            "home_goals": np.array([r[3] for r in rows], dtype=np.int64),
            "away_goals": np.array([r[4] for r in rows], dtype=np.int64),
            "matchday": np.array([r[5] for r in rows], dtype=np.int64),
        }

    return GeneratedDataset(
        spec=spec,
        train=table(train_rows),
        test=table(test_rows),
        column_docs={
            "home_team": f"home team index, 1..{N_TEAMS} (see teams.csv)",
            "away_team": f"away team index, 1..{N_TEAMS} (see teams.csv)",
            "home_goals": "goals scored by the home team",
            "away_goals": "goals scored by the away team",
            "matchday": "matchday number (train covers matchdays "
            f"1-{split_matchday}, test covers {split_matchday + 1}-{N_MATCHDAYS})",
        },
        target="home_goals, away_goals",
        oracle=None,
        overview=(
            f"Football match results for one season of an {N_TEAMS}-team league.\n"
            "Predict the goals of both sides in later matchdays from earlier ones; log_lik is the joint "
            "log density of both scores of a match."
        ),
        extra_data={"N_teams": N_TEAMS},
        extra_tables={"teams": [{"team": i, "team_id": t} for t, i in index.items()]},
    )


def generate(spec: DatasetSpec) -> GeneratedDataset:
    if spec.kind == "regression_1d":
        return gen_regression_1d(spec)
    if spec.kind == "hierarchical":
        return gen_hierarchical(spec)
    if spec.kind == "varying_slopes":
        return gen_varying_slopes(spec)
    if spec.csv_path is None:
        raise InvalidInputError("soccer datasets are loaded from a CSV file, not generated")
    return load_soccer(spec.csv_path, spec.split_matchday, spec.dataset_name)


def recompute_oracle_nlpd(oracle: Mapping[str, Any], test: Mapping[str, np.ndarray], target: str) -> float:
    """Oracle NLPD from stored per-point predictive moments and the test targets."""
    y = np.asarray(test[target], dtype=float)
    return float(np.mean(gaussian_nll(y, np.asarray(oracle["test_mean"]), np.asarray(oracle["test_sd"]))))


# --- emission -----------------------------------------------------------------


def _write_table(path: Path, table: Mapping[str, np.ndarray]) -> None:
    cols = list(table)
    arrays = [np.asarray(table[c]) for c in cols]
    lines = [",".join(cols)]
    for row in zip(*arrays):
        lines.append(",".join(
            str(int(v)) if isinstance(v, (np.integer, int)) else format_real(v) for v in row
        ))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def column_kinds(table: Mapping[str, np.ndarray]) -> dict[str, str]:
    return {c: "int" if np.issubdtype(np.asarray(v).dtype, np.integer) else "real" for c, v in table.items()}


def read_table(path: str | Path, kinds: Mapping[str, str] | None = None) -> dict[str, np.ndarray]:
    """Read a dataset CSV back, typing columns by ``kinds`` (default: real)."""
    kinds = kinds or {}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out: dict[str, np.ndarray] = {}
    for j, col in enumerate(header):
        raw = [r[j] for r in body]
        kind = kinds.get(col, "real")
        if kind == "int":
            out[col] = np.array([int(s) for s in raw], dtype=np.int64)
        elif kind == "str":
            out[col] = np.array(raw, dtype=object)
        else:
            out[col] = np.array([float(s) for s in raw], dtype=float)
    return out


def describe(ds: GeneratedDataset, evaluate_command: str | None = None) -> str:
    """Markdown descriptor handed to the proposer; never mentions the generating process."""
    title = ds.name.replace("_", " ").title()
    cmd = evaluate_command or f'stanloop evaluate {ds.name} --notes "..." --rationale "..."'
    lines = [f"# Dataset: {title}", "", "## Overview", "", ds.overview, "", "## Data Format", "",
             "`train.csv` columns:"]
    for col, doc in ds.column_docs.items():
        lines.append(f"- `{col}`: {doc}")
    if ds.extra_tables.get("teams"):
        lines.append("")
        lines.append("`teams.csv` maps team indices to the original team ids.")
    lines += [
        "",
        f"{ds.n_train} training observations.",
        f"{ds.n_test} test observations, held out and not readable.",
        "",
        "## Data Interface",
        "",
        "The evaluator passes exactly this data block to the model:",
        "",
        "```stan",
        "data {",
    ]
    lines += [f"  {v.decl}" for v in ds.interface()]
    lines += [
        "}",
        "```",
        "",
        "## Evaluation",
        "",
        "Run from the workspace root:",
        "",
        "```",
        cmd,
        "```",
        "",
        "Both `--notes` (what changed) and `--rationale` (why) are required.",
        "",
        "## log_lik contract",
        "",
        "The model must declare `vector[N_test] log_lik;` in `generated quantities`",
        "and fill `log_lik[n]` with the log predictive density of test row n given the",
        "current parameter draw. The score is the held-out NLPD computed from it (lower is better).",
    ]
    return "\n".join(lines) + "\n"


def emit_dataset(ds: GeneratedDataset, directory: str | Path, evaluate_command: str | None = None) -> dict[str, Path]:
    """Write train.csv, dataset.md and protected/{test.csv, oracle.json} under ``directory``."""
    root = Path(directory)
    protected = root / "protected"
    try:
        protected.mkdir(parents=True, exist_ok=True)
        paths = {
            "train": root / "train.csv",
            "descriptor": root / "dataset.md",
            "test": protected / "test.csv",
            "oracle": protected / "oracle.json",
        }
        _write_table(paths["train"], ds.train)
        paths["descriptor"].write_text(describe(ds, evaluate_command), encoding="utf-8", newline="\n")
        _write_table(paths["test"], ds.test)
        meta = {
            "dataset": ds.name,
            "kind": ds.spec.kind,
            "spec": _spec_dict(ds.spec),
            "target": ds.target,
            "n_train": ds.n_train,
            "n_test": ds.n_test,
            "extra_data": ds.extra_data,
            "columns": column_kinds(ds.train),
            "oracle": ds.oracle,
        }
        paths["oracle"].write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8", newline="\n")
        for tname, rows in ds.extra_tables.items():
            p = root / f"{tname}.csv"
            cols = list(rows[0]) if rows else []
            body = [",".join(cols)] + [",".join(str(r[c]) for c in cols) for r in rows]
            p.write_text("\n".join(body) + "\n", encoding="utf-8", newline="\n")
            paths[tname] = p
    except OSError as exc:
        raise InvalidInputError(f"could not write dataset files under {root}: {exc}") from exc
    return paths


def _spec_dict(spec: DatasetSpec) -> dict[str, Any]:
    d = asdict(spec)
    d["contamination_magnitude_range"] = list(spec.contamination_magnitude_range)
    d["x_range"] = list(spec.x_range)
    return d


def load_emitted(directory: str | Path) -> GeneratedDataset:
    """Rebuild a dataset from its emitted files (harness side; reads protected/)."""
    root = Path(directory)
    meta = json.loads((root / "protected" / "oracle.json").read_text(encoding="utf-8"))
    spec_d = dict(meta["spec"])
    spec_d["contamination_magnitude_range"] = tuple(spec_d["contamination_magnitude_range"])
    spec_d["x_range"] = tuple(spec_d["x_range"])
    spec = DatasetSpec(**spec_d)
    kinds = meta["columns"]
    train = read_table(root / "train.csv", kinds)
    test = read_table(root / "protected" / "test.csv", kinds)
    extra_tables = {}
    teams = root / "teams.csv"
    if teams.exists():
        t = read_table(teams, {"team": "int", "team_id": "str"})
        extra_tables["teams"] = [
            {"team": int(i), "team_id": str(tid)} for i, tid in zip(t["team"], t["team_id"])
        ]
    return GeneratedDataset(
        spec=spec,
        train=train,
        test=test,
        column_docs={c: "" for c in train},
        target=meta["target"],
        oracle=meta["oracle"],
        overview="",
        extra_data={k: int(v) for k, v in meta.get("extra_data", {}).items()},
        extra_tables=extra_tables,
    )
