"""Agent chains, completion backends and planner/coder rollouts."""

from .backends import (
    BackendKind,
    BackendSpec,
    HttpChatBackend,
    RecordingBackend,
    ReplayBackend,
    SamplingParams,
    complete,
    make_backend,
    prompt_digest,
)
from .prompts import (
    AgentRole,
    AlgorithmicThought,
    OutputParser,
    ParseStatus,
    extract_code,
    parse_thought,
    render_coder_prompt,
    render_planner_prompt,
)
from .rollout import Orchestrator, RolloutConfig, RolloutTrace, ThoughtMode

__all__ = [
    "AgentRole",
    "AlgorithmicThought",
    "BackendKind",
    "BackendSpec",
    "HttpChatBackend",
    "Orchestrator",
    "OutputParser",
    "ParseStatus",
    "RecordingBackend",
    "ReplayBackend",
    "RolloutConfig",
    "RolloutTrace",
    "SamplingParams",
    "ThoughtMode",
    "complete",
    "extract_code",
    "make_backend",
    "parse_thought",
    "prompt_digest",
    "render_coder_prompt",
    "render_planner_prompt",
]
