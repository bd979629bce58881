"""Problem datasets in JSON-lines form.

Each non-blank line is one problem::

    {"id": "p1", "prompt": "...", "tests": [{"kind": "stdio", "input": "1 2\\n", "expected": "3"}],
     "guest_hint": null}

Test ``kind`` is ``stdio`` (needs ``input`` and ``expected``) or
``assertion`` (needs ``check_source``).  Test ids default to ``t0``, ``t1``...
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .sandbox import TestCase


@dataclass(frozen=True)
class Problem:
    id: str
    prompt: str
    tests: tuple[TestCase, ...]
    guest_hint: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "tests", tuple(self.tests))
        if not self.tests:
            raise ValueError(f"problem {self.id!r} has no tests")
        ids = [t.id for t in self.tests]
        if len(set(ids)) != len(ids):
            raise ValueError(f"problem {self.id!r} has duplicate test ids")

    @classmethod
    def from_dict(cls, data: dict) -> "Problem":
        if not isinstance(data, dict):
            raise ValueError("expected a JSON object")
        unknown = set(data) - {"id", "prompt", "tests", "guest_hint"}
        if unknown:
            raise ValueError(f"unknown keys {sorted(unknown)}")
        pid, prompt, tests = data.get("id"), data.get("prompt"), data.get("tests")
        if not isinstance(pid, str) or not pid:
            raise ValueError("'id' must be a non-empty string")
        if not isinstance(prompt, str) or not prompt.strip():
            raise ValueError("'prompt' must be a non-empty string")
        if not isinstance(tests, list) or not all(isinstance(t, dict) for t in tests):
            raise ValueError("'tests' must be a list of objects")
        cases = [TestCase.from_dict(t, f"t{i}") for i, t in enumerate(tests)]
        return cls(pid, prompt, tuple(cases), data.get("guest_hint"))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "prompt": self.prompt,
            "tests": [t.to_dict() for t in self.tests],
            "guest_hint": self.guest_hint,
        }


def load_dataset(path) -> list[Problem]:
    """Parse a dataset file; any bad line raises ConfigError citing its line number."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc
    problems: list[Problem] = []
    first_seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            problem = Problem.from_dict(json.loads(line))
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
        if problem.id in first_seen:
            raise ConfigError(
                f"{path}:{lineno}: duplicate problem id {problem.id!r} (first on line {first_seen[problem.id]})"
            )
        first_seen[problem.id] = lineno
        problems.append(problem)
    return problems
