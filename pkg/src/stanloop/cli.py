"""Command-line entry point.

Exit codes: 0 success, 1 domain error (bad data, failed fit, proposer fault),
2 usage error. Settings resolve as command-line flag > config file > default.

Config file (``--config``), INI format, one ``[stanloop]`` section::

    [stanloop]
    root = experiments
    cmdstan = /opt/cmdstan
    chains = 4
    warmup = 1000
    draws = 1000
    seed = 1
    parallel_chains = 4
    max_iterations = 20
    patience = 3
    proposer_timeout = 600
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import json
import logging
import math
import shlex
import sys
from pathlib import Path
from typing import Any, Iterator, Sequence

from . import datagen
from .backend.base import ModelSource, SamplerConfig
from .errors import ConfigurationError, InvalidInputError, StanLoopError, WorkspaceError
from .workspace import open_workspace

log = logging.getLogger("stanloop")

DEFAULTS: dict[str, Any] = {
    "root": ".",
    "cmdstan": None,
    "chains": 4,
    "warmup": 1000,
    "draws": 1000,
    "seed": None,
    "parallel_chains": None,
    "max_iterations": 20,
    "patience": 3,
    "proposer_timeout": 600.0,
}
_CONFIG_TYPES = {
    "chains": int, "warmup": int, "draws": int, "seed": int, "parallel_chains": int,
    "max_iterations": int, "patience": int, "proposer_timeout": float,
}


class UsageError(Exception):
    """Inconsistent arguments; maps to exit code 2."""


def load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    except configparser.Error as exc:
        raise UsageError(f"malformed config file {path}: {exc}") from None
    if not parser.has_section("stanloop"):
        return {}
    out: dict[str, Any] = {}
    for key, raw in parser.items("stanloop"):
        if key not in DEFAULTS:
            raise UsageError(f"{path}: unknown key {key!r} in [stanloop]")
        try:
            out[key] = _CONFIG_TYPES.get(key, str)(raw)
        except ValueError:
            raise UsageError(f"{path}: {key} = {raw!r} is not a valid {_CONFIG_TYPES[key].__name__}") from None
    return out


def resolve(args: argparse.Namespace, key: str) -> Any:
    value = getattr(args, key, None)
    if value is not None:
        return value
    return args.config_values.get(key, DEFAULTS[key])


@contextlib.contextmanager
def _flag_values() -> Iterator[None]:
    """Out-of-range option values are usage errors, not domain errors."""
    try:
        yield
    except InvalidInputError as exc:
        raise UsageError(str(exc)) from None


def sampler_config(args: argparse.Namespace) -> SamplerConfig:
    seed = resolve(args, "seed")
    with _flag_values():
        return SamplerConfig(
            chains=resolve(args, "chains"),
            warmup_draws=resolve(args, "warmup"),
            sampling_draws=resolve(args, "draws"),
            seed=1 if seed is None else seed,
            parallel_chains=resolve(args, "parallel_chains"),
        )


def _root(args: argparse.Namespace) -> Path:
    return Path(resolve(args, "root"))


def _print_lines(lines: Sequence[str]) -> None:
    for line in lines:
        print(line)


# --- subcommands --------------------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    from .workspace import init_workspace

    overrides: dict[str, Any] = {}
    seed = resolve(args, "seed")
    if seed is not None:
        overrides["seed"] = seed
    for key in ("name", "n_train", "n_test", "contamination_rate", "n_groups", "n_per_group",
                "n_test_per_group", "split_matchday"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.dataset == "soccer":
        if args.csv is None:
            raise UsageError("gen-data soccer requires --csv with one season of match results")
        overrides["csv_path"] = str(Path(args.csv).resolve())
    elif args.csv is not None:
        raise UsageError("--csv only applies to the soccer dataset")
    with _flag_values():
        spec = datagen.preset(args.dataset, **overrides)
    ds = datagen.generate(spec)
    layout = init_workspace(ds, _root(args), protect=not args.no_protect)
    print(f"dataset {layout.name}: {ds.n_train} train / {ds.n_test} test")
    print(f"  {layout.relative(layout.train_csv)}")
    print(f"  {layout.relative(layout.descriptor)}")
    for p in layout.protected_files:
        print(f"  {layout.relative(p)} (protected)" if layout.enforced else f"  {layout.relative(p)} (advisory)")
    if ds.oracle is not None:
        print(f"oracle NLPD: {ds.oracle['oracle_nlpd']:.4f}")
    return 0


def _backend(args: argparse.Namespace):
    from .backend.cmdstan import CmdStanBackend

    root = _root(args)
    return CmdStanBackend(resolve(args, "cmdstan"), cache_dir=root / ".stanloop-cache")


def cmd_evaluate(args: argparse.Namespace) -> int:
    from .loop import BackendEvaluator, ExperimentLog, record_evaluation

    layout = open_workspace(_root(args), args.dataset)
    model_path = Path(args.model) if args.model else layout.model_file
    if not model_path.exists():
        raise WorkspaceError(f"model file {model_path} does not exist")
    text = model_path.read_text(encoding="utf-8")
    model = ModelSource(text)
    evaluator = BackendEvaluator(_backend(args), layout, sampler_config(args))
    ev = evaluator.evaluate(model)
    digest = layout.snapshots().put(text.encode("utf-8"))
    exp_log = ExperimentLog.load(layout.log_path)
    rec = record_evaluation(exp_log, digest, ev, args.notes, args.rationale)
    if ev.failed:
        print(ev.summary(), file=sys.stderr)
        print(f"iteration {rec.iteration} recorded as failed", file=sys.stderr)
        return 1
    print(ev.summary())
    verdict = "baseline" if rec.iteration == 0 else ("improved" if rec.accepted else "not improved")
    print(f"iteration {rec.iteration}: {verdict}; best so far {rec.best_so_far:.4f}")
    return 0


def _make_proposer(args: argparse.Namespace, layout):
    from . import proposer as P

    spec = args.proposer
    kind, _, rest = spec.partition(":")
    timeout = resolve(args, "proposer_timeout")
    if not rest:
        raise UsageError(f"--proposer {spec!r}: expected scripted:<set>, external:<command> or workspace:<command>")
    if kind == "scripted":
        if rest in P.FIXTURE_SETS:
            return P.ScriptedProposer(P.fixture_script(rest))
        return P.ScriptedProposer(P.trajectory(rest).script())
    if kind == "external":
        return P.ExternalProposer(shlex.split(rest), timeout, cwd=layout.root, unprivileged=args.unprivileged_proposer)
    if kind == "workspace":
        return P.WorkspaceProposer(shlex.split(rest), layout.root, timeout)
    raise UsageError(f"--proposer {spec!r}: unknown kind {kind!r}")


def _make_evaluator(args: argparse.Namespace, layout):
    from .loop import BackendEvaluator, ReplayEvaluator
    from .proposer import trajectory

    kind, _, rest = args.evaluator.partition(":")
    if kind == "replay":
        if not rest:
            raise UsageError("--evaluator replay:<trajectory> needs a trajectory name")
        return ReplayEvaluator(trajectory(rest).values)
    if kind == "cmdstan":
        return BackendEvaluator(_backend(args), layout, sampler_config(args))
    raise UsageError(f"--evaluator {args.evaluator!r}: expected cmdstan or replay:<trajectory>")


def cmd_loop(args: argparse.Namespace) -> int:
    from .loop import LoopConfig, run_loop, write_report

    layout = open_workspace(_root(args), args.dataset)
    with _flag_values():
        cfg = LoopConfig(resolve(args, "max_iterations"), resolve(args, "patience"), sampler_config(args), layout.name)
    proposer = _make_proposer(args, layout)
    evaluator = _make_evaluator(args, layout)

    def progress(rec) -> None:
        mark = "baseline" if rec.iteration == 0 else ("✓" if rec.accepted else "×")
        value = f"{rec.nlpd:.4f}" if math.isfinite(rec.nlpd) else "failed"
        print(f"iter {rec.iteration:>2}  NLPD {value}  {mark}  best {rec.best_so_far:.4f}", flush=True)

    exp_log = run_loop(proposer, layout, evaluator, cfg, on_record=progress)
    path = write_report(exp_log, layout.report_path, layout)
    best = exp_log.best_record()
    print(f"stopped ({exp_log.stop_reason}) after {len(exp_log)} iterations; "
          f"best iteration {best.iteration} NLPD {best.nlpd:.4f}")
    print(f"report: {layout.relative(path)}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    from .loop import ExperimentLog, write_report

    layout = open_workspace(_root(args), args.dataset)
    exp_log = ExperimentLog.load(layout.log_path)
    if not exp_log.records:
        raise WorkspaceError(f"no records in {layout.relative(layout.log_path)}")
    path = write_report(exp_log, layout.report_path, layout)
    if args.print:
        print(path.read_text(encoding="utf-8"), end="")
    else:
        print(f"report: {layout.relative(path)}")
    return 0


def cmd_oracle(args: argparse.Namespace) -> int:
    from .workspace import protected_access

    layout = open_workspace(_root(args), args.dataset)
    with protected_access(layout) as protected:
        meta = json.loads((protected / "oracle.json").read_text(encoding="utf-8"))
    if meta.get("oracle") is None:
        raise InvalidInputError(f"dataset {layout.name} is real data; it has no oracle NLPD")
    print(f"oracle NLPD: {meta['oracle']['oracle_nlpd']:.4f}")
    for name, alt in sorted(meta["oracle"].get("alternatives", {}).items()):
        print(f"  {name}: {alt['oracle_nlpd']:.4f}")
    return 0


def cmd_verify_protection(args: argparse.Namespace) -> int:
    from .workspace import verify_protection

    report = verify_protection(open_workspace(_root(args), args.dataset))
    _print_lines(report.lines())
    if report.enforced:
        print("protection enforced")
        return 0
    print("protection NOT enforced", file=sys.stderr)
    return 1


def cmd_list(args: argparse.Namespace) -> int:
    from .proposer import FIXTURE_SETS, fixture_models, trajectories

    print("datasets: " + ", ".join(datagen.PRESETS))
    print("fixture sets: " + ", ".join(FIXTURE_SETS))
    print("trajectories: " + ", ".join(trajectories()))
    print("fixture models: " + ", ".join(fixture_models()))
    return 0


# --- parser -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="dataset seed (gen-data) or sampler base seed")

    sampler = argparse.ArgumentParser(add_help=False)
    sampler.add_argument("--cmdstan", help="CmdStan root (default: $STANLOOP_CMDSTAN or $CMDSTAN)")
    sampler.add_argument("--chains", type=int)
    sampler.add_argument("--warmup", type=int, help="warmup draws per chain")
    sampler.add_argument("--draws", type=int, help="post-warmup draws per chain")
    sampler.add_argument("--parallel-chains", type=int)

    p = argparse.ArgumentParser(prog="stanloop", description="Accept/revert loop for Stan models scored by held-out NLPD.")
    p.add_argument("--root", help="workspace root (default: current directory)")
    p.add_argument("--config", help="INI config file with a [stanloop] section")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen-data", parents=[common], help="generate a dataset and lay out its workspace")
    g.add_argument("dataset", choices=list(datagen.PRESETS))
    g.add_argument("--name", help="dataset directory name")
    g.add_argument("--n-train", type=int)
    g.add_argument("--n-test", type=int)
    g.add_argument("--contamination-rate", type=float)
    g.add_argument("--n-groups", type=int)
    g.add_argument("--n-per-group", type=int, help="training rows per group")
    g.add_argument("--n-test-per-group", type=int)
    g.add_argument("--csv", help="match results CSV (soccer only)")
    g.add_argument("--split-matchday", type=int)
    g.add_argument("--no-protect", action="store_true", help="leave protected files readable")
    g.set_defaults(func=cmd_gen_data)

    e = sub.add_parser("evaluate", parents=[common, sampler], help="fit and score the working model once")
    e.add_argument("dataset")
    e.add_argument("--model", help="model file (default: <root>/model.stan)")
    e.add_argument("--notes", required=True, help="what changed")
    e.add_argument("--rationale", required=True, help="why")
    e.set_defaults(func=cmd_evaluate)

    lp = sub.add_parser("loop", parents=[common, sampler], help="run the proposal loop to completion")
    lp.add_argument("dataset")
    lp.add_argument("--proposer", required=True,
                    help="scripted:<fixture set or trajectory>, external:<command>, workspace:<command>")
    lp.add_argument("--evaluator", default="cmdstan", help="cmdstan (default) or replay:<trajectory>")
    lp.add_argument("--max-iterations", type=int)
    lp.add_argument("--patience", type=int)
    lp.add_argument("--proposer-timeout", type=float, help="seconds per proposal")
    lp.add_argument("--unprivileged-proposer", action="store_true",
                    help="run an external proposer as nobody when the harness is root")
    lp.set_defaults(func=cmd_loop)

    r = sub.add_parser("report", parents=[common], help="rebuild report.md from log.jsonl")
    r.add_argument("dataset")
    r.add_argument("--print", action="store_true", help="write the report to stdout too")
    r.set_defaults(func=cmd_report)

    o = sub.add_parser("oracle", parents=[common], help="print a synthetic dataset's oracle NLPD")
    o.add_argument("dataset")
    o.set_defaults(func=cmd_oracle)

    v = sub.add_parser("verify-protection", parents=[common], help="check that protected files are unreadable")
    v.add_argument("dataset")
    v.set_defaults(func=cmd_verify_protection)

    ls = sub.add_parser("list", parents=[common], help="list datasets, fixtures and trajectories")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.config_values = load_config(args.config)
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"stanloop: error: {exc}", file=sys.stderr)
        return 2
    except ConfigurationError as exc:
        print(f"stanloop: configuration error: {exc}", file=sys.stderr)
        return 1
    except StanLoopError as exc:
        print(f"stanloop: error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
