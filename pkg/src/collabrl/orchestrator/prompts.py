"""Prompt templates, plan parsing and code extraction."""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from enum import Enum

from ..errors import ConfigError

PLAN_OPEN = "<plan>"
PLAN_CLOSE = "</plan>"

IO_HEADING = "Input-Output Definition"
LINEAR_HEADING = "Linear Progression"
BRANCH_HEADING = "Conditional Logic"
LOOP_HEADING = "Iteration"

PLANNER_TEMPLATE = """You are the Planner. Do not write code. Produce an algorithmic plan for the problem below.

Write the plan between <plan> and </plan> using exactly these four headings:

Input-Output Definition:
  the inputs that are available and the output that must be produced.
Linear Progression:
  the ordered computational steps that turn the inputs into the output.
Conditional Logic:
  the branch decisions and the cases they handle.
Iteration:
  the loops, what they range over and when they stop.

Problem:
{problem}
"""

CODER_TEMPLATE = """You are the Coder. Implement the plan below as a complete Python program that solves the problem.
Reply with a single fenced code block.

Problem:
{problem}

Plan:
{plan}
"""

BASELINE_CODER_TEMPLATE = """You are the Coder. Write a complete Python program that solves the problem below.
Reply with a single fenced code block.

Problem:
{problem}
"""

RETRIEVAL_TEMPLATE = """You are the Retrieval agent. Recall up to three problems similar to the one below.
For each give the problem, a short plan, a Python solution and the algorithmic idea that transfers.

Problem:
{problem}
"""

RETRIEVAL_PLANNER_TEMPLATE = PLANNER_TEMPLATE + """
Relevant exemplars:
{retrieval}
"""

DEBUGGER_TEMPLATE = """You are the Debugger. The program below fails some tests for the problem.
Use the execution feedback to fix it and reply with the full corrected program in a single fenced code block.

Problem:
{problem}

Plan:
{plan}

Program:
{code}

Execution feedback:
{feedback}
"""


class OutputParser(str, Enum):
    PLAN = "Plan"
    CODE = "Code"
    EXEMPLARS = "Exemplars"
    RAW_TEXT = "RawText"


@dataclass(frozen=True)
class AgentRole:
    """One agent in a chain.  ``template`` is a ``str.format`` template over the chain context."""

    name: str
    template: str
    output_parser: OutputParser = OutputParser.RAW_TEXT

    def __post_init__(self):
        object.__setattr__(self, "output_parser", OutputParser(self.output_parser))
        template_fields(self.template)

    def to_dict(self) -> dict:
        return {"name": self.name, "template": self.template, "output_parser": self.output_parser.value}


def planner_role() -> AgentRole:
    return AgentRole("planner", PLANNER_TEMPLATE, OutputParser.PLAN)


def coder_role() -> AgentRole:
    return AgentRole("coder", CODER_TEMPLATE, OutputParser.CODE)


def baseline_coder_role() -> AgentRole:
    return AgentRole("coder", BASELINE_CODER_TEMPLATE, OutputParser.CODE)


def retrieval_role() -> AgentRole:
    return AgentRole("retrieval", RETRIEVAL_TEMPLATE, OutputParser.EXEMPLARS)


def retrieval_planner_role() -> AgentRole:
    return AgentRole("planner", RETRIEVAL_PLANNER_TEMPLATE, OutputParser.PLAN)


def debugger_role() -> AgentRole:
    return AgentRole("debugger", DEBUGGER_TEMPLATE, OutputParser.CODE)


BUILTIN_ROLES = {
    "planner": planner_role,
    "coder": coder_role,
    "baseline_coder": baseline_coder_role,
    "retrieval": retrieval_role,
    "retrieval_planner": retrieval_planner_role,
    "debugger": debugger_role,
}


def template_fields(template: str) -> set[str]:
    try:
        return {name for _, name, _, _ in string.Formatter().parse(template) if name}
    except ValueError as exc:
        raise ConfigError(f"malformed template: {exc}") from exc


def render(template: str, context: dict) -> str:
    missing = template_fields(template) - context.keys()
    if missing:
        raise ConfigError(f"unresolved template placeholders: {sorted(missing)}")
    return template.format_map(context)


_DELIM_RE = re.compile(r"<(\\*)(/?plan\b)", re.IGNORECASE)
_UNDELIM_RE = re.compile(r"<(\\*)\\(/?plan\b)", re.IGNORECASE)


def escape_delimiters(text: str) -> str:
    """Neutralize plan tags in untrusted text; reversible with ``unescape_delimiters``."""
    return _DELIM_RE.sub(lambda m: "<" + m.group(1) + "\\" + m.group(2), text)


def unescape_delimiters(text: str) -> str:
    return _UNDELIM_RE.sub(lambda m: "<" + m.group(1) + m.group(2), text)


def render_planner_prompt(problem_text: str, template: str = PLANNER_TEMPLATE, **extra) -> str:
    if not problem_text.strip():
        raise ValueError("problem prompt is empty")
    return render(template, {"problem": escape_delimiters(problem_text), **extra})


def render_coder_prompt(problem_text: str, plan_raw: str | None, template: str | None = None) -> str:
    """Coder prompt; with ``plan_raw=None`` the baseline (problem-only) prompt."""
    problem = escape_delimiters(problem_text)
    if plan_raw is None:
        return render(template or BASELINE_CODER_TEMPLATE, {"problem": problem})
    return render(template or CODER_TEMPLATE, {"problem": problem, "plan": plan_raw})


# ---------------------------------------------------------------------------
# Plan parsing


class ParseStatus(str, Enum):
    OK = "ok"
    NO_SECTIONS = "no_sections"
    NO_DELIMITERS = "no_delimiters"
    EMPTY = "empty"


@dataclass(frozen=True)
class AlgorithmicThought:
    raw: str
    status: ParseStatus
    io_definition: str | None = None
    linear_steps: tuple[str, ...] | None = None
    branches: tuple[str, ...] | None = None
    loops: tuple[str, ...] | None = None

    @property
    def structured(self) -> bool:
        return self.status is ParseStatus.OK

    def to_dict(self) -> dict:
        return {
            "raw": self.raw,
            "status": self.status.value,
            "io_definition": self.io_definition,
            "linear_steps": None if self.linear_steps is None else list(self.linear_steps),
            "branches": None if self.branches is None else list(self.branches),
            "loops": None if self.loops is None else list(self.loops),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AlgorithmicThought":
        def tup(v):
            return None if v is None else tuple(v)

        return cls(
            raw=data["raw"],
            status=ParseStatus(data["status"]),
            io_definition=data.get("io_definition"),
            linear_steps=tup(data.get("linear_steps")),
            branches=tup(data.get("branches")),
            loops=tup(data.get("loops")),
        )


_PLAN_BLOCK_RE = re.compile(r"<plan>(.*?)(?:</plan>|\Z)", re.IGNORECASE | re.DOTALL)

# "Input:", "- Output:", "2. Sequence (Step-by-Step Process):", "## Iteration", "Step 1: Define the Input-Output Structure"
_HEADING_RE = re.compile(
    r"""^\s*
    (?:\#{1,6}\s*|[-*]\s*)?
    (?:\*\*)?
    (?:(?:step\s*)?\d+\s*[.):]\s*)?
    (?P<title>[A-Za-z][A-Za-z /&()\-]{0,60}?)
    (?:\*\*)?
    \s*(?::(?P<rest>.*)|$)
    """,
    re.IGNORECASE | re.VERBOSE,
)

_SECTION_KEYWORDS = (
    ("io", ("input", "output")),
    ("linear", ("linear", "sequence", "progression", "step-by-step")),
    ("branches", ("branch", "conditional", "condition")),
    ("loops", ("iteration", "loop", "repetition")),
)

_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*")


def _classify_title(title: str) -> str | None:
    lowered = title.lower()
    for section, words in _SECTION_KEYWORDS:
        if any(w in lowered for w in words):
            return section
    return None


def _heading(line: str) -> tuple[str | None, str] | None:
    """(section or None when unrecognized, inline content) when the line looks like a heading."""
    m = _HEADING_RE.match(line)
    if not m:
        return None
    title = m.group("title").strip()
    rest = m.group("rest")
    if len(title.split()) > 6:
        return None
    section = _classify_title(title)
    marked = bool(re.match(r"^\s*(?:#|\*\*|step\s*\d)", line, re.IGNORECASE))
    if rest is None and not marked:
        # A bare line is a heading only when it is short, unbulleted and names a section.
        if section is None or re.match(r"^\s*[-*•]", line) or len(title.split()) > 3:
            return None
    return section, (rest or "").strip()


def _indent(line: str) -> int:
    return len(line) - len(line.lstrip())


def _clean_item(line: str) -> str:
    return _BULLET_RE.sub("", line).strip()


def parse_thought(completion: str) -> AlgorithmicThought:
    """Extract the plan block and split it into the four sections.  Never raises.

    Headings are recognized by keyword (input/output, sequence/linear,
    branch/conditional, loop/iteration).  An unrecognized heading starts an
    ignored section only when it is no deeper than the current section's
    heading, so "1. For each item:" inside a Branch section stays content.
    """
    if not completion or not completion.strip():
        return AlgorithmicThought(raw=completion or "", status=ParseStatus.EMPTY)
    m = _PLAN_BLOCK_RE.search(completion)
    if m is None:
        return AlgorithmicThought(raw=completion, status=ParseStatus.NO_DELIMITERS)
    raw = unescape_delimiters(m.group(1).strip("\n"))

    sections: dict[str, list[str]] = {"io": [], "linear": [], "branches": [], "loops": [], "other": []}
    seen: set[str] = set()
    current, current_indent = "other", -1
    for line in raw.splitlines():
        if not line.strip():
            continue
        head = _heading(line)
        bulleted = bool(re.match(r"^\s*[-*•]\s", line))
        if head is not None:
            section, inline = head
            if section is not None:
                current, current_indent = section, _indent(line)
                seen.add(section)
                if inline:
                    sections[current].append(inline)
                continue
            if not bulleted and (current == "other" or _indent(line) <= current_indent):
                current, current_indent = "other", _indent(line)
                if inline:
                    sections[current].append(inline)
                continue
        item = _clean_item(line)
        if item:
            sections[current].append(item)

    if not seen:
        return AlgorithmicThought(raw=raw, status=ParseStatus.NO_SECTIONS)
    return AlgorithmicThought(
        raw=raw,
        status=ParseStatus.OK,
        io_definition="\n".join(sections["io"]),
        linear_steps=tuple(sections["linear"]),
        branches=tuple(sections["branches"]),
        loops=tuple(sections["loops"]),
    )


_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)(?:```|\Z)", re.DOTALL)


def extract_code(completion: str) -> str:
    """Body of the first fenced block, or the whole completion when there is none."""
    m = _FENCE_RE.search(completion or "")
    if m is None:
        return completion or ""
    return m.group(1)
