"""Verifiable reward signals for the planner and coder stages."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .analysis import ComplexityEstimate, CostTable
from .errors import ConfigError
from .sandbox import ExecutionReport

MEGABYTE = 1024 * 1024


class TimeMode(str, Enum):
    SIGMOID_COST = "SigmoidCost"
    CONFIDENCE_COST = "ConfidenceCost"


class MemoryNormalizer(str, Enum):
    RELATIVE_TO_TARGET = "RelativeToTarget"
    ABSOLUTE_MEGABYTES = "AbsoluteMegabytes"


class MemoryBasis(str, Enum):
    RAW = "raw"
    NET = "net"


class Stage(str, Enum):
    PLANNER = "planner"
    CODER = "coder"


@dataclass(frozen=True)
class SigmoidConfig:
    k: float = 10.0
    c: float = 0.5

    def __post_init__(self):
        if not self.k > 0:
            raise ConfigError(f"sigmoid steepness must be positive, got {self.k}")


@dataclass(frozen=True)
class RewardConfig:
    sigmoid: SigmoidConfig = field(default_factory=SigmoidConfig)
    time_sigmoid: SigmoidConfig = field(default_factory=lambda: SigmoidConfig(k=10.0, c=0.0))
    lam: float = 0.5
    time_mode: TimeMode = TimeMode.CONFIDENCE_COST
    cost_table: CostTable = field(default_factory=CostTable)
    memory_normalizer: MemoryNormalizer = MemoryNormalizer.RELATIVE_TO_TARGET
    memory_basis: MemoryBasis = MemoryBasis.RAW
    raw_accuracy: bool = False

    def __post_init__(self):
        object.__setattr__(self, "time_mode", TimeMode(self.time_mode))
        object.__setattr__(self, "memory_normalizer", MemoryNormalizer(self.memory_normalizer))
        object.__setattr__(self, "memory_basis", MemoryBasis(self.memory_basis))
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ConfigError(f"lambda must be a finite non-negative number, got {self.lam}")

    def to_dict(self) -> dict:
        return {
            "sigmoid": {"k": self.sigmoid.k, "c": self.sigmoid.c},
            "time_sigmoid": {"k": self.time_sigmoid.k, "c": self.time_sigmoid.c},
            "lambda": self.lam,
            "time_mode": self.time_mode.value,
            "cost_table": self.cost_table.to_dict(),
            "memory_normalizer": self.memory_normalizer.value,
            "memory_basis": self.memory_basis.value,
            "raw_accuracy": self.raw_accuracy,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RewardConfig":
        kwargs = {}
        if "sigmoid" in data:
            kwargs["sigmoid"] = SigmoidConfig(**data["sigmoid"])
        if "time_sigmoid" in data:
            kwargs["time_sigmoid"] = SigmoidConfig(**data["time_sigmoid"])
        if "lambda" in data:
            kwargs["lam"] = float(data["lambda"])
        if "cost_table" in data:
            kwargs["cost_table"] = CostTable(data["cost_table"])
        for key in ("time_mode", "memory_normalizer", "memory_basis", "raw_accuracy"):
            if key in data:
                kwargs[key] = data[key]
        unknown = set(data) - {"sigmoid", "time_sigmoid", "lambda", "cost_table", "time_mode",
                               "memory_normalizer", "memory_basis", "raw_accuracy"}
        if unknown:
            raise ConfigError(f"unknown reward config keys: {sorted(unknown)}")
        return cls(**kwargs)


@dataclass(frozen=True)
class RewardRecord:
    sample_id: str
    stage: Stage
    r_acc: float
    r_total: float
    r_time: float | None = None
    r_space: float | None = None
    time_mode: str | None = None

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "stage": self.stage.value,
            "r_acc": self.r_acc,
            "r_time": self.r_time,
            "r_space": self.r_space,
            "r_total": self.r_total,
            "time_mode": self.time_mode,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RewardRecord":
        return cls(
            sample_id=data["sample_id"],
            stage=Stage(data["stage"]),
            r_acc=data["r_acc"],
            r_total=data["r_total"],
            r_time=data.get("r_time"),
            r_space=data.get("r_space"),
            time_mode=data.get("time_mode"),
        )


def scaled_sigmoid(x: float, cfg: SigmoidConfig | None = None) -> float:
    cfg = cfg or SigmoidConfig()
    z = -cfg.k * (x - cfg.c)
    # Split by sign so exp never overflows.
    if z >= 0:
        e = math.exp(-z)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(z))


def _accuracy_term(p: float, cfg: RewardConfig) -> float:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"pass rate {p} outside [0, 1]")
    return p if cfg.raw_accuracy else scaled_sigmoid(p, cfg.sigmoid)


def accuracy_reward(pass_rates: Sequence[float], cfg: RewardConfig | None = None) -> float:
    """Mean of the sigmoid-weighted pass rates of the snippets."""
    cfg = cfg or RewardConfig()
    if len(pass_rates) == 0:
        raise ValueError("accuracy_reward needs at least one pass rate")
    return math.fsum(_accuracy_term(p, cfg) for p in pass_rates) / len(pass_rates)


def time_reward(estimates: Sequence[ComplexityEstimate], cfg: RewardConfig | None = None) -> float:
    cfg = cfg or RewardConfig()
    if len(estimates) == 0:
        raise ValueError("time_reward needs at least one complexity estimate")
    if cfg.time_mode is TimeMode.SIGMOID_COST:
        terms = (scaled_sigmoid(-e.cost, cfg.time_sigmoid) for e in estimates)
    else:
        terms = (e.confidence * (1.0 - e.cost) for e in estimates)
    return math.fsum(terms) / len(estimates)


def _memory_of(report: ExecutionReport, cfg: RewardConfig) -> int:
    return report.peak_memory_net_bytes if cfg.memory_basis is MemoryBasis.NET else report.peak_memory_bytes


def target_memory(reports: Sequence[ExecutionReport], cfg: RewardConfig | None = None) -> int | None:
    """Smallest memory among fully passing reports, or None if none passes."""
    cfg = cfg or RewardConfig()
    passing = [_memory_of(r, cfg) for r in reports if r.passed_all]
    return min(passing) if passing else None


def space_reward(report: ExecutionReport, target: int | None, cfg: RewardConfig | None = None) -> float:
    cfg = cfg or RewardConfig()
    if target is None or not report.passed_all:
        return 0.0
    gap = abs(_memory_of(report, cfg) - target)
    if cfg.memory_normalizer is MemoryNormalizer.RELATIVE_TO_TARGET:
        delta = gap / max(target, 1)
    else:
        delta = gap / MEGABYTE
    return math.exp(-delta)


def planner_reward(pass_rates: Sequence[float], estimates: Sequence[ComplexityEstimate],
                   cfg: RewardConfig | None = None, sample_id: str = "thought") -> RewardRecord:
    cfg = cfg or RewardConfig()
    if len(pass_rates) != len(estimates):
        raise ValueError(
            f"pass_rates ({len(pass_rates)}) and estimates ({len(estimates)}) must align per snippet"
        )
    r_acc = accuracy_reward(pass_rates, cfg)
    r_time = time_reward(estimates, cfg)
    return RewardRecord(
        sample_id=sample_id,
        stage=Stage.PLANNER,
        r_acc=r_acc,
        r_time=r_time,
        r_total=r_time + r_acc,
        time_mode=cfg.time_mode.value,
    )


def coder_reward(report: ExecutionReport, target: int | None, cfg: RewardConfig | None = None,
                 sample_id: str | None = None) -> RewardRecord:
    cfg = cfg or RewardConfig()
    r_acc = _accuracy_term(report.pass_rate, cfg)
    r_space = space_reward(report, target, cfg)
    return RewardRecord(
        sample_id=sample_id or report.candidate_id,
        stage=Stage.CODER,
        r_acc=r_acc,
        r_space=r_space,
        r_total=r_acc + cfg.lam * r_space,
    )


def coder_group_rewards(reports: Sequence[ExecutionReport], cfg: RewardConfig | None = None
                        ) -> tuple[int | None, list[RewardRecord]]:
    """Target memory for the group plus one coder record per report."""
    cfg = cfg or RewardConfig()
    target = target_memory(reports, cfg)
    return target, [coder_reward(r, target, cfg) for r in reports]
