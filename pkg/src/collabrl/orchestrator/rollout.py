"""Planner-stage, coder-stage and generic agent-chain rollouts.

A rollout samples completions, judges every candidate in the sandbox, and
only after the whole group is judged computes rewards and group-relative
advantages.  Backend failures never abort a rollout: the affected sample is
recorded as a failed generation and scores pass rate 0.
"""

from __future__ import annotations

import hashlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

from ..analysis import (
    ComplexityEstimate,
    StructuralFeatures,
    cyclomatic_complexity,
    estimate_source,
    predict_complexity,
)
from ..dataset import Problem
from ..errors import BackendError, ConfigError
from ..evalmetrics import CollaborationGainSample, ProblemEval, problem_set_pass_rate
from ..grpo import (
    AdvantageGroup,
    GroupSample,
    GrpoConfig,
    TrainingRecord,
    build_training_records,
    group_advantages,
)
from ..rewards import RewardConfig, RewardRecord, coder_group_rewards, planner_reward
from ..sandbox import ExecutionReport, JudgePool, ResourceLimits, TestKind, Verdict
from .backends import complete
from .prompts import (
    AgentRole,
    AlgorithmicThought,
    OutputParser,
    baseline_coder_role,
    coder_role,
    escape_delimiters,
    extract_code,
    parse_thought,
    planner_role,
    render,
    render_coder_prompt,
    render_planner_prompt,
    template_fields,
)

log = logging.getLogger(__name__)

FEEDBACK_EXCERPT_CHARS = 600

# Context keys each parser publishes for later roles, besides the role's own name.
_PARSER_KEYS = {
    OutputParser.PLAN: "plan",
    OutputParser.CODE: "code",
    OutputParser.EXEMPLARS: "retrieval",
}


class ThoughtMode(str, Enum):
    RESAMPLE = "resample"
    FIXED = "fixed"


@dataclass(frozen=True)
class RolloutConfig:
    n_thoughts: int = 5
    m_codes_per_thought: int = 5
    z_coder_samples: int = 5
    seed: int = 0
    thought_mode: ThoughtMode = ThoughtMode.RESAMPLE
    limits: ResourceLimits = field(default_factory=ResourceLimits)

    def __post_init__(self):
        object.__setattr__(self, "thought_mode", ThoughtMode(self.thought_mode))
        for name in ("n_thoughts", "m_codes_per_thought", "z_coder_samples"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")

    def to_dict(self) -> dict:
        return {
            "n_thoughts": self.n_thoughts,
            "m_codes_per_thought": self.m_codes_per_thought,
            "z_coder_samples": self.z_coder_samples,
            "seed": self.seed,
            "thought_mode": self.thought_mode.value,
            "limits": self.limits.__dict__.copy(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RolloutConfig":
        data = dict(data)
        limits = ResourceLimits(**data.pop("limits", {}))
        try:
            return cls(limits=limits, **data)
        except TypeError as exc:
            raise ConfigError(f"bad rollout config: {exc}") from exc


# ---------------------------------------------------------------------------
# Trace types


def _opt(obj, fn):
    return None if obj is None else fn(obj)


@dataclass(frozen=True)
class CandidateTrace:
    """One code sample c_{i,j} and how it fared."""

    index: int
    prompt: str
    completion: str | None
    code: str | None
    report: ExecutionReport
    estimate: ComplexityEstimate | None = None
    cc: int | None = None
    reward: RewardRecord | None = None
    generation_error: str | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "prompt": self.prompt,
            "completion": self.completion,
            "code": self.code,
            "report": self.report.to_dict(),
            "estimate": _opt(self.estimate, ComplexityEstimate.to_dict),
            "cc": self.cc,
            "reward": _opt(self.reward, RewardRecord.to_dict),
            "generation_error": self.generation_error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CandidateTrace":
        return cls(
            index=data["index"],
            prompt=data["prompt"],
            completion=data.get("completion"),
            code=data.get("code"),
            report=ExecutionReport.from_dict(data["report"]),
            estimate=_opt(data.get("estimate"), ComplexityEstimate.from_dict),
            cc=data.get("cc"),
            reward=_opt(data.get("reward"), RewardRecord.from_dict),
            generation_error=data.get("generation_error"),
        )


@dataclass(frozen=True)
class ThoughtTrace:
    """One algorithmic thought t_i with the candidates sampled under it."""

    index: int
    prompt: str
    completion: str | None
    thought: AlgorithmicThought | None
    candidates: tuple[CandidateTrace, ...]
    reward: RewardRecord | None = None
    generation_error: str | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "prompt": self.prompt,
            "completion": self.completion,
            "thought": _opt(self.thought, AlgorithmicThought.to_dict),
            "candidates": [c.to_dict() for c in self.candidates],
            "reward": _opt(self.reward, RewardRecord.to_dict),
            "generation_error": self.generation_error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ThoughtTrace":
        return cls(
            index=data["index"],
            prompt=data["prompt"],
            completion=data.get("completion"),
            thought=_opt(data.get("thought"), AlgorithmicThought.from_dict),
            candidates=tuple(CandidateTrace.from_dict(c) for c in data["candidates"]),
            reward=_opt(data.get("reward"), RewardRecord.from_dict),
            generation_error=data.get("generation_error"),
        )


@dataclass(frozen=True)
class ChainStep:
    role: str
    prompt: str
    completion: str | None
    output: str | None
    report: ExecutionReport | None = None
    generation_error: str | None = None

    def to_dict(self) -> dict:
        return {
            "role": self.role,
            "prompt": self.prompt,
            "completion": self.completion,
            "output": self.output,
            "report": _opt(self.report, ExecutionReport.to_dict),
            "generation_error": self.generation_error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChainStep":
        return cls(
            role=data["role"],
            prompt=data["prompt"],
            completion=data.get("completion"),
            output=data.get("output"),
            report=_opt(data.get("report"), ExecutionReport.from_dict),
            generation_error=data.get("generation_error"),
        )


@dataclass(frozen=True)
class ChainSample:
    index: int
    steps: tuple[ChainStep, ...]
    final_report: ExecutionReport
    final_code: str | None
    cc: int | None = None
    reward: RewardRecord | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "steps": [s.to_dict() for s in self.steps],
            "final_report": self.final_report.to_dict(),
            "final_code": self.final_code,
            "cc": self.cc,
            "reward": _opt(self.reward, RewardRecord.to_dict),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChainSample":
        return cls(
            index=data["index"],
            steps=tuple(ChainStep.from_dict(s) for s in data["steps"]),
            final_report=ExecutionReport.from_dict(data["final_report"]),
            final_code=data.get("final_code"),
            cc=data.get("cc"),
            reward=_opt(data.get("reward"), RewardRecord.from_dict),
        )


@dataclass(frozen=True)
class RolloutTrace:
    problem_id: str
    stage: str
    seed: int
    step: int = 0
    thoughts: tuple[ThoughtTrace, ...] = ()
    chain_samples: tuple[ChainSample, ...] = ()
    group: AdvantageGroup | None = None
    target_memory: int | None = None
    target_role: str | None = None
    backend_fingerprints: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def execution_reports(self) -> list[ExecutionReport]:
        if self.stage == "chain":
            return [s.report for c in self.chain_samples for s in c.steps if s.report is not None]
        return [c.report for t in self.thoughts for c in t.candidates]

    @property
    def reward_records(self) -> list[RewardRecord]:
        if self.stage == "planner":
            return [t.reward for t in self.thoughts]
        if self.stage == "coder":
            return [c.reward for t in self.thoughts for c in t.candidates]
        return [c.reward for c in self.chain_samples]

    def to_dict(self, include_timings: bool = True) -> dict:
        out = {
            "problem_id": self.problem_id,
            "stage": self.stage,
            "seed": self.seed,
            "step": self.step,
            "thoughts": [t.to_dict() for t in self.thoughts],
            "chain_samples": [c.to_dict() for c in self.chain_samples],
            "group": _opt(self.group, AdvantageGroup.to_dict),
            "target_memory": self.target_memory,
            "target_role": self.target_role,
            "backend_fingerprints": dict(self.backend_fingerprints),
        }
        if include_timings:
            out["timings"] = dict(self.timings)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RolloutTrace":
        return cls(
            problem_id=data["problem_id"],
            stage=data["stage"],
            seed=data["seed"],
            step=data.get("step", 0),
            thoughts=tuple(ThoughtTrace.from_dict(t) for t in data.get("thoughts", [])),
            chain_samples=tuple(ChainSample.from_dict(c) for c in data.get("chain_samples", [])),
            group=_opt(data.get("group"), AdvantageGroup.from_dict),
            target_memory=data.get("target_memory"),
            target_role=data.get("target_role"),
            backend_fingerprints=data.get("backend_fingerprints", {}),
            timings=data.get("timings", {}),
        )


# ---------------------------------------------------------------------------
# Orchestrator


def _backend_fingerprint(backend) -> str:
    spec = getattr(backend, "spec", None)
    if spec is not None:
        return spec.fingerprint
    source = getattr(backend, "source", "")
    return f"{type(backend).__name__}:{hashlib.sha256(str(source).encode()).hexdigest()[:16]}"


def _unparseable_estimate(cfg: RewardConfig) -> ComplexityEstimate:
    return predict_complexity(StructuralFeatures(parse_ok=False), cfg.cost_table)


def format_feedback(report: ExecutionReport, tests, excerpt_chars: int = FEEDBACK_EXCERPT_CHARS) -> str:
    """Execution feedback for a debugger: one block per failing test."""
    if report.generation_failed:
        return "No program was produced."
    by_id = {t.id: t for t in tests}
    lines = [f"Passed {report.pass_count} of {report.n_tests} tests."]
    for outcome in report.outcomes:
        if outcome.verdict is Verdict.PASS:
            continue
        lines.append(f"Test {outcome.test_id}: {outcome.verdict.value}")
        test = by_id.get(outcome.test_id)
        if test is not None and test.kind is TestKind.STDIO:
            lines.append(f"  input: {test.input!r}")
            lines.append(f"  expected: {test.expected!r}")
        elif test is not None:
            lines.append(f"  check: {test.check_source.strip()}")
        if outcome.stderr_excerpt:
            lines.append("  stderr:")
            lines.extend("    " + s for s in outcome.stderr_excerpt[-excerpt_chars:].splitlines())
    return "\n".join(lines)


class Orchestrator:
    """Runs rollouts for one set of backends and configs.

    ``backends`` maps ``planner``, ``coder`` and optionally ``auxiliary`` (or
    any chain role name) to objects with a ``complete(role, prompt, n, seed,
    start_index)`` method.
    """

    def __init__(self, backends: dict, judge: JudgePool, rollout_cfg: RolloutConfig | None = None,
                 reward_cfg: RewardConfig | None = None, grpo_cfg: GrpoConfig | None = None,
                 predictor=None, clock: Callable[[], float] = time.perf_counter):
        self.backends = dict(backends)
        self.judge = judge
        self.rollout_cfg = rollout_cfg or RolloutConfig()
        self.reward_cfg = reward_cfg or RewardConfig()
        self.grpo_cfg = grpo_cfg or GrpoConfig()
        self.predictor = predictor
        self.clock = clock

    def backend_for(self, role: str):
        for key in (role, "auxiliary", "coder"):
            if key in self.backends:
                return self.backends[key]
        raise ConfigError(f"no backend configured for role {role!r}")

    def _fingerprints(self, roles) -> dict:
        return {role: _backend_fingerprint(self.backend_for(role)) for role in roles}

    def _generate(self, role: str, prompt: str, n: int, start_index: int = 0
                  ) -> list[tuple[str | None, str | None]]:
        """``n`` (completion, error) pairs; a backend failure fails the whole request."""
        try:
            texts = complete(self.backend_for(role), role, prompt, n, self.rollout_cfg.seed, start_index)
        except BackendError as exc:
            log.warning("%s generation failed: %s", role, exc)
            return [(None, str(exc))] * n
        return [(text, None) for text in texts]

    def _judge(self, jobs: Sequence[tuple[str, str | None]], problem: Problem) -> list[ExecutionReport]:
        """Judge ``(candidate_id, code or None)`` jobs concurrently; None means failed generation."""
        futures = [
            None if code is None else self.judge.submit(code, problem.tests, cid, problem.guest_hint)
            for cid, code in jobs
        ]
        return [
            ExecutionReport.failed_generation(cid, len(problem.tests)) if fut is None else fut.result()
            for (cid, _), fut in zip(jobs, futures)
        ]

    def _estimate(self, code: str | None) -> ComplexityEstimate:
        if code is None:
            return _unparseable_estimate(self.reward_cfg)
        return estimate_source(code, self.reward_cfg.cost_table, self.predictor)

    def planner_stage_rollout(self, problem: Problem, step: int = 0) -> RolloutTrace:
        cfg = self.rollout_cfg
        t0 = self.clock()
        planner_prompt = render_planner_prompt(problem.prompt)
        thoughts = self._generate("planner", planner_prompt, cfg.n_thoughts)
        t_plan = self.clock()

        coder_prompts, candidates = [], []
        for i, (text, error) in enumerate(thoughts):
            thought = None if text is None else parse_thought(text)
            prompt = "" if thought is None else render_coder_prompt(problem.prompt, thought.raw)
            coder_prompts.append(prompt)
            if thought is None:
                candidates.append([(None, error)] * cfg.m_codes_per_thought)
            else:
                candidates.append(self._generate("coder", prompt, cfg.m_codes_per_thought))
        t_code = self.clock()

        jobs = [
            (f"{problem.id}/t{i}/c{j}", None if text is None else extract_code(text))
            for i, group in enumerate(candidates) for j, (text, _) in enumerate(group)
        ]
        reports = iter(self._judge(jobs, problem))
        t_judge = self.clock()

        thought_traces = []
        for i, ((text, error), group) in enumerate(zip(thoughts, candidates)):
            cands = []
            for j, (completion, cerr) in enumerate(group):
                code = None if completion is None else extract_code(completion)
                cands.append(CandidateTrace(
                    index=j,
                    prompt=coder_prompts[i],
                    completion=completion,
                    code=code,
                    report=next(reports),
                    estimate=self._estimate(code),
                    cc=None if code is None else cyclomatic_complexity(code),
                    generation_error=cerr,
                ))
            reward = planner_reward(
                [c.report.pass_rate for c in cands],
                [c.estimate for c in cands],
                self.reward_cfg,
                sample_id=f"{problem.id}/t{i}",
            )
            thought_traces.append(ThoughtTrace(
                index=i,
                prompt=planner_prompt,
                completion=text,
                thought=None if text is None else parse_thought(text),
                candidates=tuple(cands),
                reward=reward,
                generation_error=error,
            ))

        group = group_advantages([t.reward.r_total for t in thought_traces], self.grpo_cfg)
        return RolloutTrace(
            problem_id=problem.id,
            stage="planner",
            seed=cfg.seed,
            step=step,
            thoughts=tuple(thought_traces),
            group=group,
            backend_fingerprints=self._fingerprints(("planner", "coder")),
            timings={
                "plan_s": t_plan - t0,
                "code_s": t_code - t_plan,
                "judge_s": t_judge - t_code,
                "total_s": self.clock() - t0,
            },
        )

    def thought_index(self, step: int) -> int:
        """Planner sample index used to guide the coder at a training step."""
        return step if self.rollout_cfg.thought_mode is ThoughtMode.RESAMPLE else 0

    def coder_stage_rollout(self, problem: Problem, step: int = 0) -> RolloutTrace:
        cfg = self.rollout_cfg
        t0 = self.clock()
        planner_prompt = render_planner_prompt(problem.prompt)
        [(text, error)] = self._generate("planner", planner_prompt, 1, self.thought_index(step))
        thought = None if text is None else parse_thought(text)
        if thought is None:
            coder_prompt, samples = "", [(None, error)] * cfg.z_coder_samples
        else:
            coder_prompt = render_coder_prompt(problem.prompt, thought.raw)
            samples = self._generate("coder", coder_prompt, cfg.z_coder_samples)
        t_gen = self.clock()

        codes = [None if s is None else extract_code(s) for s, _ in samples]
        reports = self._judge([(f"{problem.id}/c{j}", code) for j, code in enumerate(codes)], problem)
        t_judge = self.clock()

        target, rewards = coder_group_rewards(reports, self.reward_cfg)
        cands = tuple(
            CandidateTrace(
                index=j,
                prompt=coder_prompt,
                completion=completion,
                code=code,
                report=report,
                cc=None if code is None else cyclomatic_complexity(code),
                reward=reward,
                generation_error=cerr,
            )
            for j, ((completion, cerr), code, report, reward) in enumerate(zip(samples, codes, reports, rewards))
        )
        group = group_advantages([r.r_total for r in rewards], self.grpo_cfg)
        return RolloutTrace(
            problem_id=problem.id,
            stage="coder",
            seed=cfg.seed,
            step=step,
            thoughts=(ThoughtTrace(0, planner_prompt, text, thought, cands, None, error),),
            group=group,
            target_memory=target,
            backend_fingerprints=self._fingerprints(("planner", "coder")),
            timings={"generate_s": t_gen - t0, "judge_s": t_judge - t_gen, "total_s": self.clock() - t0},
        )

    # -- generic chains -----------------------------------------------------

    @staticmethod
    def validate_chain(chain: Sequence[AgentRole]) -> None:
        """Check every placeholder is resolvable and the chain ends in code."""
        if not chain:
            raise ConfigError("agent chain is empty")
        if chain[-1].output_parser is not OutputParser.CODE:
            raise ConfigError(f"chain must end in a Code role, ends in {chain[-1].name!r}")
        available = {"problem"}
        for role in chain:
            missing = template_fields(role.template) - available
            if missing:
                raise ConfigError(f"role {role.name!r} uses unresolvable placeholders {sorted(missing)}")
            available.add(role.name)
            if role.output_parser in _PARSER_KEYS:
                available.add(_PARSER_KEYS[role.output_parser])
            if role.output_parser is OutputParser.CODE:
                available.add("feedback")

    def _chain_sample(self, problem: Problem, chain: Sequence[AgentRole], index: int) -> ChainSample:
        context = {"problem": escape_delimiters(problem.prompt)}
        steps: list[ChainStep] = []
        code: str | None = None
        report: ExecutionReport | None = None
        failed = False
        for position, role in enumerate(chain):
            if failed:
                # Downstream context was never produced, so there is no prompt to render.
                steps.append(ChainStep(role.name, "", None, None, None, "upstream generation failed"))
                continue
            prompt = render(role.template, context)
            [(text, error)] = self._generate(role.name, prompt, 1, index)
            if text is None:
                failed = True
                steps.append(ChainStep(role.name, prompt, None, None, None, error))
                continue
            if role.output_parser is OutputParser.PLAN:
                output = parse_thought(text).raw
            elif role.output_parser is OutputParser.CODE:
                output = extract_code(text)
            else:
                output = text
            context[role.name] = output
            if role.output_parser in _PARSER_KEYS:
                context[_PARSER_KEYS[role.output_parser]] = output
            step_report = None
            if role.output_parser is OutputParser.CODE:
                code = output
                cid = f"{problem.id}/s{index}/{position}-{role.name}"
                [step_report] = self._judge([(cid, code)], problem)
                report = step_report
                context["feedback"] = format_feedback(report, problem.tests)
            steps.append(ChainStep(role.name, prompt, text, output, step_report))

        if failed or report is None:
            final = ExecutionReport.failed_generation(f"{problem.id}/s{index}", len(problem.tests))
            code = None
        else:
            final = report
        return ChainSample(index, tuple(steps), final, code, None if code is None else cyclomatic_complexity(code))

    def run_agent_chain(self, problem: Problem, chain: Sequence[AgentRole], n: int = 1,
                        target_role: str | None = None, start_index: int = 0) -> RolloutTrace:
        """Run ``n`` independent passes of ``chain``; rewards use the final code's report."""
        self.validate_chain(chain)
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        target_role = target_role or chain[-1].name
        if target_role not in {r.name for r in chain}:
            raise ConfigError(f"target role {target_role!r} is not in the chain")
        t0 = self.clock()
        samples = [self._chain_sample(problem, chain, start_index + i) for i in range(n)]
        target, rewards = coder_group_rewards([s.final_report for s in samples], self.reward_cfg)
        samples = [
            ChainSample(s.index, s.steps, s.final_report, s.final_code, s.cc, r)
            for s, r in zip(samples, rewards)
        ]
        return RolloutTrace(
            problem_id=problem.id,
            stage="chain",
            seed=self.rollout_cfg.seed,
            step=start_index,
            chain_samples=tuple(samples),
            group=group_advantages([r.r_total for r in rewards], self.grpo_cfg),
            target_memory=target,
            target_role=target_role,
            backend_fingerprints=self._fingerprints(dict.fromkeys(r.name for r in chain)),
            timings={"total_s": self.clock() - t0},
        )

    # -- batch helpers --------------------------------------------------------

    def map_problems(self, fn: Callable[[Problem], object], problems: Sequence[Problem],
                     workers: int = 1) -> list:
        """Apply ``fn`` to each problem, up to ``workers`` at a time, keeping input order."""
        if workers <= 1:
            return [fn(p) for p in problems]
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="problem") as pool:
            return list(pool.map(fn, problems))

    def rollout(self, stage: str, problems: Sequence[Problem], chain: Sequence[AgentRole] | None = None,
                step: int = 0, workers: int = 1) -> list[RolloutTrace]:
        if stage == "planner":
            fn = lambda p: self.planner_stage_rollout(p, step)  # noqa: E731
        elif stage == "coder":
            fn = lambda p: self.coder_stage_rollout(p, step)  # noqa: E731
        elif stage == "chain":
            chain = list(chain or (planner_role(), coder_role()))
            self.validate_chain(chain)
            n = self.rollout_cfg.z_coder_samples
            fn = lambda p: self.run_agent_chain(p, chain, n, start_index=step * n)  # noqa: E731
        else:
            raise ConfigError(f"unknown stage {stage!r}")
        return self.map_problems(fn, problems, workers)

    def evaluate(self, problems: Sequence[Problem], chain: Sequence[AgentRole], attempts: int,
                 workers: int = 1) -> tuple[list[ProblemEval], list[RolloutTrace]]:
        """``attempts`` independent chain passes per problem, as evaluation records."""
        self.validate_chain(chain)
        traces = self.map_problems(lambda p: self.run_agent_chain(p, chain, attempts), problems, workers)
        evals = [
            ProblemEval(t.problem_id, tuple(s.final_report for s in t.chain_samples),
                        tuple(s.cc for s in t.chain_samples))
            for t in traces
        ]
        return evals, traces

    def measure_collaboration_gain(self, problems: Sequence[Problem], step: int,
                                   chain: Sequence[AgentRole] | None = None, attempts: int = 1,
                                   strict: bool = False, workers: int = 1) -> CollaborationGainSample:
        """Run the coder alone and with the auxiliary chain on the same problems."""
        chain = list(chain or (planner_role(), coder_role()))
        base, _ = self.evaluate(problems, [baseline_coder_role()], attempts, workers)
        aux, _ = self.evaluate(problems, chain, attempts, workers)
        return CollaborationGainSample.measure(
            step,
            problem_set_pass_rate(base, strict),
            problem_set_pass_rate(aux, strict),
            aggregate="strict" if strict else "apr",
        )


# ---------------------------------------------------------------------------
# Training records


def training_records(trace: RolloutTrace, fingerprint: str) -> list[TrainingRecord]:
    """Records for the stage's trainable role only; the other role is frozen."""
    group_id = f"{trace.problem_id}/{trace.stage}/{trace.step}"
    if trace.stage == "planner":
        samples = [GroupSample(t.prompt, t.completion or "", t.reward) for t in trace.thoughts]
        stage = "planner"
    elif trace.stage == "coder":
        [thought] = trace.thoughts
        samples = [GroupSample(c.prompt, c.completion or "", c.reward) for c in thought.candidates]
        stage = "coder"
    else:
        # The record format only knows planner and coder; any code-emitting role trains as a coder.
        samples = []
        for s in trace.chain_samples:
            step = next(st for st in reversed(s.steps) if st.role == trace.target_role)
            samples.append(GroupSample(step.prompt, step.completion or "", s.reward))
        stage = "planner" if trace.target_role == "planner" else "coder"
        group_id = f"{trace.problem_id}/chain-{trace.target_role}/{trace.step}"
    return build_training_records(trace.problem_id, stage, group_id, samples, trace.group, fingerprint)
