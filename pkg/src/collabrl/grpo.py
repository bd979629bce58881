"""Group-relative advantages, the clipped GRPO objective, and training-record export.

Nothing here computes gradients.  ``grpo_objective`` evaluates the objective
for log-probabilities supplied by an external trainer, which is useful for
checking a trainer's loss against an independent implementation.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import ConfigError, RecordWriteError
from .rewards import RewardRecord

DEGENERATE_STD = 1e-12


class TokenAggregation(str, Enum):
    SUM = "Sum"
    MEAN = "Mean"


class StdMode(str, Enum):
    POPULATION = "Population"
    SAMPLE = "Sample"


@dataclass(frozen=True)
class GrpoConfig:
    clip_epsilon: float = 0.2
    kl_beta: float = 0.04
    token_aggregation: TokenAggregation = TokenAggregation.MEAN
    std_mode: StdMode = StdMode.POPULATION

    def __post_init__(self):
        object.__setattr__(self, "token_aggregation", TokenAggregation(self.token_aggregation))
        object.__setattr__(self, "std_mode", StdMode(self.std_mode))
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ConfigError(f"clip_epsilon must lie in (0, 1), got {self.clip_epsilon}")
        if not self.kl_beta >= 0.0:
            raise ConfigError(f"kl_beta must be >= 0, got {self.kl_beta}")

    def to_dict(self) -> dict:
        return {
            "clip_epsilon": self.clip_epsilon,
            "kl_beta": self.kl_beta,
            "token_aggregation": self.token_aggregation.value,
            "std_mode": self.std_mode.value,
        }


@dataclass(frozen=True)
class AdvantageGroup:
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]
    mean: float
    std: float
    degenerate: bool

    def to_dict(self) -> dict:
        return {
            "rewards": list(self.rewards),
            "advantages": list(self.advantages),
            "mean": self.mean,
            "std": self.std,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AdvantageGroup":
        return cls(
            rewards=tuple(data["rewards"]),
            advantages=tuple(data["advantages"]),
            mean=data["mean"],
            std=data["std"],
            degenerate=data["degenerate"],
        )


def group_advantages(rewards: Sequence[float], cfg: GrpoConfig | None = None) -> AdvantageGroup:
    """Standardize rewards within a group; zero-variance groups get all-zero advantages."""
    cfg = cfg or GrpoConfig()
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("group_advantages needs a non-empty 1-D reward list")
    if not np.all(np.isfinite(r)):
        raise ValueError("rewards must be finite")
    mean = float(r.mean())
    ddof = 1 if cfg.std_mode is StdMode.SAMPLE and r.size > 1 else 0
    std = float(r.std(ddof=ddof))
    degenerate = std < DEGENERATE_STD
    adv = np.zeros_like(r) if degenerate else (r - mean) / std
    return AdvantageGroup(
        rewards=tuple(float(x) for x in r),
        advantages=tuple(float(x) for x in adv),
        mean=mean,
        std=std,
        degenerate=degenerate,
    )


@dataclass(frozen=True)
class TokenScoredSequence:
    logp_current: tuple[float, ...]
    logp_old: tuple[float, ...]
    logp_ref: tuple[float, ...]

    def __post_init__(self):
        for name in ("logp_current", "logp_old", "logp_ref"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        n = len(self.logp_current)
        if n == 0:
            raise ValueError("a scored sequence needs at least one token")
        if len(self.logp_old) != n or len(self.logp_ref) != n:
            raise ValueError("logp_current, logp_old and logp_ref must have equal length")
        for name in ("logp_current", "logp_old", "logp_ref"):
            values = getattr(self, name)
            if not all(math.isfinite(v) and v <= 0.0 for v in values):
                raise ValueError(f"{name} must be finite log-probabilities (<= 0)")


@dataclass(frozen=True)
class ObjectiveBreakdown:
    objective: float
    policy_term: float
    kl_term: float
    clip_fraction: float
    token_aggregation: TokenAggregation


def kl_penalty(logp_current: Sequence[float], logp_ref: Sequence[float]) -> list[float]:
    """Per-token k3 estimator exp(d) - d - 1 with d = logp_ref - logp_current."""
    if len(logp_current) != len(logp_ref):
        raise ValueError("kl_penalty needs equal-length log-probability lists")
    cur = np.asarray(logp_current, dtype=float)
    ref = np.asarray(logp_ref, dtype=float)
    d = ref - cur
    # Series form near 0 avoids cancellation in expm1(d) - d.
    small = np.abs(d) < 1e-4
    series = d * d * (0.5 + d * (1.0 / 6.0 + d / 24.0))
    values = np.where(small, series, np.expm1(d) - d)
    return [max(0.0, float(v)) for v in values]


def grpo_objective(sequences: Sequence[TokenScoredSequence], advantages: Sequence[float],
                   cfg: GrpoConfig | None = None) -> ObjectiveBreakdown:
    cfg = cfg or GrpoConfig()
    if len(sequences) == 0 or len(sequences) != len(advantages):
        raise ValueError("need one advantage per sequence and at least one sequence")
    if not all(math.isfinite(a) for a in advantages):
        raise ValueError("advantages must be finite")
    eps = cfg.clip_epsilon
    policy_parts, kl_parts = [], []
    clipped_tokens = total_tokens = 0
    for seq, adv in zip(sequences, advantages):
        ratio = np.exp(np.asarray(seq.logp_current) - np.asarray(seq.logp_old))
        unclipped = ratio * adv
        clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
        per_token = np.minimum(unclipped, clipped)
        clipped_tokens += int(np.count_nonzero(clipped < unclipped))
        total_tokens += ratio.size
        kl = np.asarray(kl_penalty(seq.logp_current, seq.logp_ref))
        if cfg.token_aggregation is TokenAggregation.MEAN:
            policy_parts.append(float(per_token.mean()))
            kl_parts.append(float(kl.mean()))
        else:
            policy_parts.append(float(per_token.sum()))
            kl_parts.append(float(kl.sum()))
    policy_term = math.fsum(policy_parts) / len(sequences)
    kl_term = math.fsum(kl_parts) / len(sequences)
    return ObjectiveBreakdown(
        objective=policy_term - cfg.kl_beta * kl_term,
        policy_term=policy_term,
        kl_term=kl_term,
        clip_fraction=clipped_tokens / total_tokens,
        token_aggregation=cfg.token_aggregation,
    )


# ---------------------------------------------------------------------------
# Training records

RECORD_FIELDS = (
    "problem_id",
    "stage",
    "group_id",
    "sample_index",
    "prompt",
    "completion",
    "r_acc",
    "r_time",
    "r_space",
    "r_total",
    "advantage",
    "degenerate",
    "config_fingerprint",
)


def config_fingerprint(*configs) -> str:
    """Stable hex digest over config objects (anything with ``to_dict``) or plain dicts."""
    payload = [c.to_dict() if hasattr(c, "to_dict") else c for c in configs]
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TrainingRecord:
    problem_id: str
    stage: str
    group_id: str
    sample_index: int
    prompt: str
    completion: str
    reward: RewardRecord
    advantage: float
    degenerate: bool
    config_fingerprint: str

    def to_json(self) -> str:
        values = {
            "problem_id": self.problem_id,
            "stage": self.stage,
            "group_id": self.group_id,
            "sample_index": self.sample_index,
            "prompt": self.prompt,
            "completion": self.completion,
            "r_acc": self.reward.r_acc,
            "r_time": self.reward.r_time,
            "r_space": self.reward.r_space,
            "r_total": self.reward.r_total,
            "advantage": self.advantage,
            "degenerate": self.degenerate,
            "config_fingerprint": self.config_fingerprint,
        }
        return json.dumps({k: values[k] for k in RECORD_FIELDS}, ensure_ascii=False)


@dataclass(frozen=True)
class GroupSample:
    """One member of a rollout group as seen by the record writer."""

    prompt: str
    completion: str
    reward: RewardRecord


def build_training_records(problem_id: str, stage: str, group_id: str, samples: Sequence[GroupSample],
                           group: AdvantageGroup, fingerprint: str) -> list[TrainingRecord]:
    if len(samples) != len(group.advantages):
        raise ValueError("advantages were computed for a different group size")
    for sample, reward in zip(samples, group.rewards):
        if not math.isclose(sample.reward.r_total, reward, rel_tol=0.0, abs_tol=1e-12):
            raise ValueError("advantages were computed from different rewards")
    return [
        TrainingRecord(problem_id, stage, group_id, i, s.prompt, s.completion, s.reward,
                       group.advantages[i], group.degenerate, fingerprint)
        for i, s in enumerate(samples)
    ]


def emit_training_records(records: Iterable[TrainingRecord], sink: IO[str]) -> int:
    """Write one JSON line per record; returns the count written."""
    written = 0
    for record in records:
        try:
            sink.write(record.to_json() + "\n")
        except OSError as exc:
            raise RecordWriteError(written, exc) from exc
        written += 1
    return written
