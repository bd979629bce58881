"""The ``collabrl`` command: judge, rollout, eval and report.

Exit codes: 0 success, 1 judged failure, 2 usage or configuration error,
3 environment error (missing interpreter, sandbox unavailable).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

from .dataset import Problem, load_dataset
from .errors import BackendError, ConfigError, EnvironmentFailure
from .evalmetrics import CollaborationGainSample, aggregate_report, cg_timeseries
from .grpo import GrpoConfig, config_fingerprint, emit_training_records
from .orchestrator.backends import BackendSpec, make_backend
from .orchestrator.prompts import BUILTIN_ROLES, AgentRole
from .orchestrator.rollout import Orchestrator, RolloutConfig, RolloutTrace, training_records
from .rewards import RewardConfig
from .sandbox import (
    ExecutionReport,
    GuestRunner,
    InterpreterNotFound,
    JudgePool,
    SandboxError,
    Verdict,
    resolve_interpreter,
)

log = logging.getLogger("collabrl")

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_ENV = 0, 1, 2, 3

TRACES_FILE = "traces.jsonl"
RECORDS_FILE = "records.jsonl"
CG_FILE = "cg.jsonl"
CG_SERIES_FILE = "cg_series.tsv"
REPORT_FILE = "report.jsonl"
TABLE_FILE = "report.txt"


# ---------------------------------------------------------------------------
# Configuration


def _parse_role(spec) -> AgentRole:
    if isinstance(spec, str):
        try:
            return BUILTIN_ROLES[spec]()
        except KeyError:
            raise ConfigError(f"unknown built-in role {spec!r}; choose from {sorted(BUILTIN_ROLES)}") from None
    if isinstance(spec, dict):
        try:
            return AgentRole(spec["name"], spec["template"], spec.get("output_parser", "RawText"))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad role definition {spec!r}: {exc}") from exc
    raise ConfigError(f"bad role definition {spec!r}")


def _parse_runner(data: dict) -> GuestRunner:
    try:
        return GuestRunner(**{k: tuple(map(tuple, v)) if k == "error_patterns" else v for k, v in data.items()})
    except TypeError as exc:
        raise ConfigError(f"bad runner definition: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs.  Loaded from a JSON file whose keys mirror these fields."""

    dataset: str | None = None
    backends: dict = field(default_factory=dict)
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    chain: tuple = ("planner", "coder")
    eval_chain: tuple | None = None
    runners: dict = field(default_factory=dict)
    output_dir: str = "out"
    problem_workers: int = 1
    sandbox_workers: int = 4
    base_dir: str = "."

    @property
    def seed(self) -> int:
        return self.rollout.seed

    def chain_roles(self, which: str = "chain") -> list[AgentRole]:
        specs = self.eval_chain if which == "eval_chain" and self.eval_chain else self.chain
        return [_parse_role(s) for s in specs]

    def backend_specs(self) -> dict[str, BackendSpec]:
        return {
            name: BackendSpec.from_dict(spec, Path(self.base_dir))
            for name, spec in self.backends.items()
        }

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict:
        """The fingerprinted part: everything that can change results, not where they go."""
        return {
            "dataset": self.dataset,
            "backends": {name: spec.to_dict() for name, spec in sorted(self.backend_specs().items())},
            "rollout": self.rollout.to_dict(),
            "reward": self.reward.to_dict(),
            "grpo": self.grpo.to_dict(),
            "chain": [_parse_role(s).to_dict() for s in self.chain],
            "eval_chain": None if self.eval_chain is None else [_parse_role(s).to_dict() for s in self.eval_chain],
            "runners": {k: v for k, v in sorted(self.runners.items())},
        }

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict, base_dir: str = ".") -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data = dict(data)
        known = {"dataset", "backends", "rollout", "reward", "grpo", "chain", "eval_chain", "runners",
                 "output_dir", "workers", "seed", "limits"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        rollout = dict(data.get("rollout", {}))
        if "limits" in data:
            rollout["limits"] = data["limits"]
        if "seed" in data:
            rollout["seed"] = data["seed"]
        workers = data.get("workers", {})
        try:
            cfg = cls(
                dataset=data.get("dataset"),
                backends=dict(data.get("backends", {})),
                rollout=RolloutConfig.from_dict(rollout),
                reward=RewardConfig.from_dict(data.get("reward", {})),
                grpo=GrpoConfig(**data.get("grpo", {})),
                chain=tuple(data.get("chain", ("planner", "coder"))),
                eval_chain=None if data.get("eval_chain") is None else tuple(data["eval_chain"]),
                runners=dict(data.get("runners", {})),
                output_dir=data.get("output_dir", "out"),
                problem_workers=int(workers.get("problems", 1)),
                sandbox_workers=int(workers.get("sandbox", 4)),
                base_dir=base_dir,
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad config: {exc}") from exc
        # Validate nested parts eagerly so bad configs fail before any work starts.
        cfg.backend_specs()
        cfg.chain_roles()
        cfg.chain_roles("eval_chain")
        {name: _parse_runner(r) for name, r in cfg.runners.items()}
        return cfg


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return RunConfig.from_dict(data, str(Path(path).resolve().parent))


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, rollout=replace(cfg.rollout, seed=args.seed))
    if getattr(args, "workers", None) is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = replace(cfg, sandbox_workers=args.workers)
    if getattr(args, "dataset", None):
        cfg = replace(cfg, dataset=os.path.abspath(args.dataset))
    return cfg


# ---------------------------------------------------------------------------
# Helpers


def write_atomic(path: Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_problems(cfg: RunConfig) -> list[Problem]:
    if not cfg.dataset:
        raise ConfigError("no dataset given (set 'dataset' in the config or pass --dataset)")
    return load_dataset(cfg.resolve(cfg.dataset))


def _judge_pool(cfg: RunConfig) -> JudgePool:
    runners = {name: _parse_runner(r) for name, r in cfg.runners.items()}
    pool = JudgePool(workers=cfg.sandbox_workers, limits=cfg.rollout.limits, runners=runners)
    resolve_interpreter(pool.runner.interpreter_command[0])
    return pool


def _orchestrator(cfg: RunConfig, pool: JudgePool) -> Orchestrator:
    backends = {name: make_backend(spec) for name, spec in cfg.backend_specs().items()}
    for needed in ("planner", "coder"):
        if needed not in backends:
            raise ConfigError(f"config has no {needed!r} backend")
    return Orchestrator(backends, pool, cfg.rollout, cfg.reward, cfg.grpo)


def _out_dir(cfg: RunConfig, args) -> Path:
    return Path(args.out) if getattr(args, "out", None) else cfg.resolve(cfg.output_dir)


def _echo_fingerprint(cfg: RunConfig) -> None:
    print(f"config fingerprint: {cfg.fingerprint}")


def _jsonl(rows) -> str:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows)


def render_report(report: ExecutionReport) -> str:
    lines = [f"{report.candidate_id}: {report.pass_count}/{report.n_tests} passed"
             f" (max {report.runtime_ms_max:.1f} ms, peak {report.peak_memory_bytes / 2**20:.1f} MiB)"]
    for outcome in report.outcomes:
        lines.append(f"  {outcome.test_id:<12} {outcome.verdict.value}")
        if outcome.verdict is not Verdict.PASS and outcome.stderr_excerpt:
            lines.append("    " + outcome.stderr_excerpt.strip().splitlines()[-1])
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Commands


def cmd_judge(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    problems = {p.id: p for p in _load_problems(cfg)}
    if args.problem not in problems:
        raise ConfigError(f"no problem with id {args.problem!r} in the dataset")
    problem = problems[args.problem]
    try:
        source = Path(args.source).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {args.source}: {exc}") from exc
    _echo_fingerprint(cfg)
    with _judge_pool(cfg) as pool:
        report = pool.judge(source, problem.tests, Path(args.source).name, problem.guest_hint)
    print(json.dumps(report.to_dict(), ensure_ascii=False))
    print(render_report(report))
    return EXIT_OK if report.passed_all else EXIT_FAILED


def cmd_rollout(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    problems = _load_problems(cfg)
    out = _out_dir(cfg, args)
    fingerprint = cfg.fingerprint
    _echo_fingerprint(cfg)
    chain = cfg.chain_roles() if args.stage == "chain" else None
    with _judge_pool(cfg) as pool:
        orch = _orchestrator(cfg, pool)
        traces = orch.rollout(args.stage, problems, chain, step=args.step, workers=cfg.problem_workers)
        cg_sample = None
        if args.cg:
            cg_sample = orch.measure_collaboration_gain(problems, args.step, cfg.chain_roles(),
                                                        workers=cfg.problem_workers)

    records = [r for t in traces for r in training_records(t, fingerprint)]
    write_atomic(out / TRACES_FILE, _jsonl(t.to_dict() for t in traces))
    lines = []
    emit_training_records(records, _ListSink(lines))
    write_atomic(out / RECORDS_FILE, "".join(lines))

    for trace in traces:
        rewards = ", ".join(f"{r.r_total:.4f}" for r in trace.reward_records)
        advantages = ", ".join(f"{a:+.4f}" for a in trace.group.advantages)
        print(f"{trace.problem_id} [{trace.stage}] rewards: {rewards} | advantages: {advantages}")
    print(f"wrote {len(records)} training records to {out / RECORDS_FILE}")

    if cg_sample is not None:
        path = out / CG_FILE
        previous = path.read_text(encoding="utf-8") if path.exists() else ""
        write_atomic(path, previous + json.dumps(cg_sample.to_dict()) + "\n")
        cg = "undefined" if cg_sample.cg is None else f"{cg_sample.cg:.4f}"
        print(f"collaboration gain at step {cg_sample.step}: {cg}"
              f" (p_base {cg_sample.p_base:.4f}, p_aux {cg_sample.p_aux:.4f})")
    return EXIT_OK


class _ListSink:
    def __init__(self, lines: list):
        self.lines = lines

    def write(self, text: str) -> int:
        self.lines.append(text)
        return len(text)


def cmd_eval(args) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    ks = sorted(set(args.k))
    if ks[0] < 1:
        raise ConfigError("--k values must be >= 1")
    problems = _load_problems(cfg)
    out = _out_dir(cfg, args)
    _echo_fingerprint(cfg)
    chain = cfg.chain_roles("eval_chain")
    with _judge_pool(cfg) as pool:
        orch = _orchestrator(cfg, pool)
        evals, traces = orch.evaluate(problems, chain, max(ks), workers=cfg.problem_workers)
    report = aggregate_report(evals, ks, extra={"config_fingerprint": cfg.fingerprint,
                                                "chain": [r.name for r in chain]})
    write_atomic(out / REPORT_FILE, report.to_json() + "\n")
    write_atomic(out / TABLE_FILE, report.render_table() + "\n")
    write_atomic(out / "eval_traces.jsonl", _jsonl(t.to_dict() for t in traces))
    print(report.render_table())
    return EXIT_OK


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if line.strip():
            try:
                rows.append(json.loads(line))
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: corrupt line ({exc})") from exc
    return rows


def _trace_row(trace: RolloutTrace) -> str:
    records = trace.reward_records
    mean_reward = sum(r.r_total for r in records) / len(records)
    reports = trace.execution_reports
    best = max((r.pass_rate for r in reports), default=0.0)
    return (f"{trace.problem_id:<16} {trace.stage:<8} {trace.step:>4} {len(records):>7}"
            f" {mean_reward:>11.4f} {best:>9.3f} {'yes' if trace.group.degenerate else 'no':>10}")


def cmd_report(args) -> int:
    root = Path(args.traces)
    if not root.exists():
        raise ConfigError(f"{root} does not exist")
    files = sorted(root.rglob(TRACES_FILE)) if root.is_dir() else [root]
    traces = []
    for path in files:
        for lineno, row in enumerate(_read_jsonl(path), 1):
            try:
                traces.append(RolloutTrace.from_dict(row))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"{path}:{lineno}: corrupt trace ({exc!r})") from exc
    cg_files = sorted(root.rglob(CG_FILE)) if root.is_dir() else []
    if not traces and not cg_files:
        print(f"no traces found under {root}")
        return EXIT_OK

    if traces:
        header = (f"{'problem':<16} {'stage':<8} {'step':>4} {'samples':>7}"
                  f" {'mean_reward':>11} {'best_pass':>9} {'degenerate':>10}")
        table = "\n".join([header] + [_trace_row(t) for t in traces])
        print(table)
        if args.out:
            write_atomic(Path(args.out) / "traces_table.txt", table + "\n")

    for path in cg_files:
        try:
            samples = [CollaborationGainSample.from_dict(r) for r in _read_jsonl(path)]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: corrupt collaboration-gain record ({exc!r})") from exc
        try:
            series = cg_timeseries(samples)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        target = Path(args.out) / CG_SERIES_FILE if args.out else path.with_name(CG_SERIES_FILE)
        write_atomic(target, series.to_tsv())
        print(f"collaboration gain series ({path}): {json.dumps(series.summary())} -> {target}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="collabrl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--dataset", help="override the dataset path from the config")
        p.add_argument("--seed", type=int, help="override the rollout seed")
        p.add_argument("--workers", type=int, help="number of concurrent sandbox workers")
        if out:
            p.add_argument("--out", help="output directory (default: the config's output_dir)")

    p = sub.add_parser("judge", help="judge one program against a problem's tests")
    p.add_argument("source", help="program file")
    p.add_argument("--problem", required=True, help="problem id in the dataset")
    common(p, out=False)
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("rollout", help="run one rollout step and write training records")
    p.add_argument("--stage", choices=("planner", "coder", "chain"), required=True)
    p.add_argument("--step", type=int, default=0, help="training step index (default 0)")
    p.add_argument("--cg", action="store_true", help="also measure collaboration gain at this step")
    common(p)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("eval", help="evaluate the configured chain and write a benchmark report")
    p.add_argument("--k", type=int, nargs="+", default=[1, 5], help="Pass@k values (default: 1 5)")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="tabulate traces and export collaboration-gain series")
    p.add_argument("traces", help="trace file or directory written by rollout")
    p.add_argument("--out", help="directory for tables and series files")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InterpreterNotFound as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV
    except (EnvironmentFailure, SandboxError, BackendError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
