"""Helpers shared by the test modules: synthetic reports and replay fixtures."""

from __future__ import annotations

import json
from pathlib import Path

from collabrl.dataset import Problem
from collabrl.orchestrator.backends import ReplayBackend, prompt_digest
from collabrl.orchestrator.prompts import parse_thought, render_coder_prompt, render_planner_prompt
from collabrl.sandbox import ExecutionReport, TestCase, TestOutcome, Verdict

FIXTURES = Path(__file__).parent / "fixtures"
GUEST = FIXTURES / "guest"


def make_report(verdicts, cid="c", memory=0, runtime_ms=1.0, generation_failed=False) -> ExecutionReport:
    if generation_failed:
        return ExecutionReport.failed_generation(cid, len(verdicts) or 1)
    outcomes = [
        TestOutcome(f"t{i}", Verdict(v), runtime_ms, memory, 0 if v == "Pass" else 1)
        for i, v in enumerate(verdicts)
    ]
    return ExecutionReport.from_outcomes(cid, outcomes)


def report_with_rate(passed: int, total: int, cid="c", memory=0) -> ExecutionReport:
    return make_report(["Pass"] * passed + ["WrongAnswer"] * (total - passed), cid, memory)


def sum_problem(pid="p1", n_tests=2) -> Problem:
    tests = [TestCase(f"t{i}", "stdio", f"{i} {i + 1}\n", str(2 * i + 1)) for i in range(n_tests)]
    return Problem(pid, f"Read two integers on one line and print their sum. ({pid})", tuple(tests))


GOOD_SUM = "a, b = map(int, input().split())\nprint(a + b)\n"
BAD_SUM = "a, b = map(int, input().split())\nprint(a - b - 1000)\n"


def fenced(code: str) -> str:
    return f"Here is the program.\n```python\n{code}```\n"


def plan(text: str) -> str:
    return (
        "<plan>\nInput-Output Definition:\n  two integers in, their sum out\n"
        f"Linear Progression:\n  1. {text}\nConditional Logic:\n  none\n"
        "Iteration:\n  none\n</plan>"
    )


class ReplayBuilder:
    """Accumulates replay entries keyed the same way ReplayBackend looks them up."""

    def __init__(self):
        self.rows: dict[tuple[str, str, int], str] = {}

    def add(self, role: str, prompt: str, completions, start_index: int = 0) -> "ReplayBuilder":
        for i, text in enumerate(completions, start_index):
            self.rows[(role, prompt_digest(prompt), i)] = text
        return self

    def planner(self, problem: Problem, plans, start_index: int = 0):
        return self.add("planner", render_planner_prompt(problem.prompt), plans, start_index)

    def coder(self, problem: Problem, plan_completion: str | None, codes, start_index: int = 0):
        raw = None if plan_completion is None else parse_thought(plan_completion).raw
        return self.add("coder", render_coder_prompt(problem.prompt, raw), codes, start_index)

    def backend(self) -> ReplayBackend:
        return ReplayBackend(dict(self.rows))

    def write(self, path) -> Path:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            for (role, digest, index), completion in sorted(self.rows.items()):
                fh.write(json.dumps({"role": role, "prompt_digest": digest, "sample_index": index,
                                     "completion": completion}) + "\n")
        return path


def write_dataset(path, problems) -> Path:
    path = Path(path)
    path.write_text("".join(json.dumps(p.to_dict()) + "\n" for p in problems), encoding="utf-8")
    return path


class ScriptedBackend:
    """Answers by role from fixed lists and remembers every request it saw."""

    def __init__(self, **by_role):
        self.by_role = by_role
        self.calls: list[tuple[str, str, int, int]] = []

    def complete(self, role, prompt, n, seed=None, start_index=0):
        self.calls.append((role, prompt, n, start_index))
        texts = self.by_role[role]
        if isinstance(texts, Exception):
            raise texts
        return [texts[i % len(texts)] for i in range(start_index, start_index + n)]

    def prompts(self, role):
        return [prompt for r, prompt, _, _ in self.calls if r == role]


def write_workspace(root, problems, replay: ReplayBuilder, **config) -> Path:
    """Dataset, replay fixture and config side by side; returns the config path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_dataset(root / "dataset.jsonl", problems)
    replay.write(root / "replay.jsonl")
    spec = {"kind": "Replay", "replay_fixture": "replay.jsonl"}
    data = {
        "dataset": "dataset.jsonl",
        "backends": {"planner": spec, "coder": spec},
        "limits": {"wall_time_ms": 2000},
        "output_dir": "out",
        **config,
    }
    path = root / "config.json"
    path.write_text(json.dumps(data, indent=2), encoding="utf-8")
    return path
