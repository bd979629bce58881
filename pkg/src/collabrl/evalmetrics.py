"""Benchmark metrics: Pass@k, average pass rate, efficiency averages, the
failure taxonomy, and collaboration gain with its training-time series."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .sandbox import ExecutionReport, Verdict

TAXONOMY_KEYS = ("TOE", "VE", "TE", "Other")

_TAXON = {
    Verdict.TIMEOUT_ERROR: "TOE",
    Verdict.VALUE_ERROR: "VE",
    Verdict.TYPE_ERROR: "TE",
}

# Tie-break among equally frequent failure verdicts: Timeout > Type > Value > everything else.
_SEVERITY = {Verdict.TIMEOUT_ERROR: 3, Verdict.TYPE_ERROR: 2, Verdict.VALUE_ERROR: 1}


@dataclass(frozen=True)
class ProblemEval:
    problem_id: str
    attempts: tuple[ExecutionReport, ...]
    cc_values: tuple[int | None, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "attempts", tuple(self.attempts))
        object.__setattr__(self, "cc_values", tuple(self.cc_values))
        if not self.attempts:
            raise ValueError(f"problem {self.problem_id!r} has no attempts")


def _comb_pass_at_k(n: int, c: int, k: int) -> float:
    if n - c < k:
        return 1.0
    return 1.0 - math.comb(n - c, k) / math.comb(n, k)


def pass_at_k(evals: Sequence[ProblemEval], k: int, combinatorial: bool = False) -> float:
    """Fraction of problems solved (pass rate 1) by any of their first ``k`` attempts.

    With ``combinatorial=True`` the unbiased estimator over all attempts is used instead.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not evals:
        raise ValueError("pass_at_k needs at least one problem")
    total = 0.0
    for ev in evals:
        if len(ev.attempts) < k:
            raise ValueError(f"problem {ev.problem_id!r} has {len(ev.attempts)} attempts, fewer than k={k}")
        if combinatorial:
            n = len(ev.attempts)
            c = sum(a.passed_all for a in ev.attempts)
            total += _comb_pass_at_k(n, c, k)
        else:
            total += any(a.passed_all for a in ev.attempts[:k])
    return total / len(evals)


def average_pass_rate(evals: Sequence[ProblemEval]) -> float:
    rates = [a.pass_rate for ev in evals for a in ev.attempts]
    if not rates:
        raise ValueError("average_pass_rate needs at least one attempt")
    return math.fsum(rates) / len(rates)


def collaboration_gain(p_base: float, p_aux: float) -> float | None:
    """1 - p_base / p_aux, or None (undefined) when p_aux is 0."""
    for name, value in (("p_base", p_base), ("p_aux", p_aux)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name}={value} is not a pass rate in [0, 1]")
    if p_aux == 0:
        return None
    return 1.0 - p_base / p_aux


def dominant_failure(report: ExecutionReport) -> str | None:
    """Taxonomy class of a failing attempt, or None when it passed."""
    if report.passed_all:
        return None
    counts = Counter(o.verdict for o in report.outcomes if o.verdict is not Verdict.PASS)
    if not counts:
        return "Other"
    verdict = max(counts, key=lambda v: (counts[v], _SEVERITY.get(v, 0)))
    return _TAXON.get(verdict, "Other")


def failure_breakdown(evals: Sequence[ProblemEval]) -> tuple[float, dict[str, float]]:
    attempts = [a for ev in evals for a in ev.attempts]
    if not attempts:
        raise ValueError("failure_breakdown needs at least one attempt")
    classes = Counter(dominant_failure(a) for a in attempts)
    failures = len(attempts) - classes.pop(None, 0)
    n = len(attempts)
    return failures / n, {key: classes.get(key, 0) / n for key in TAXONOMY_KEYS}


@dataclass(frozen=True)
class BenchmarkReport:
    pass_at: dict
    apr: float
    failure_rate: float
    taxonomy: dict
    n_problems: int
    n_attempts: int
    runtime_ms_avg: float | None = None
    memory_avg_bytes: float | None = None
    cc_avg: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n_problems": self.n_problems,
            "n_attempts": self.n_attempts,
            "pass_at": {str(k): v for k, v in sorted(self.pass_at.items())},
            "apr": self.apr,
            "runtime_ms_avg": self.runtime_ms_avg,
            "memory_avg_bytes": self.memory_avg_bytes,
            "memory_unit": "bytes",
            "cc_avg": self.cc_avg,
            "failure_rate": self.failure_rate,
            "taxonomy": dict(self.taxonomy),
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    def render_table(self) -> str:
        def pct(x):
            return "-" if x is None else f"{100 * x:.1f}"

        rows = [(f"Pass@{k}", pct(v)) for k, v in sorted(self.pass_at.items())]
        rows += [
            ("APR", pct(self.apr)),
            ("Runtime (ms)", "-" if self.runtime_ms_avg is None else f"{self.runtime_ms_avg:.1f}"),
            ("MU (MiB)", "-" if self.memory_avg_bytes is None else f"{self.memory_avg_bytes / 2**20:.2f}"),
            ("CC", "-" if self.cc_avg is None else f"{self.cc_avg:.2f}"),
            ("FR", pct(self.failure_rate)),
        ]
        rows += [(key, pct(self.taxonomy[key])) for key in TAXONOMY_KEYS]
        width = max(len(name) for name, _ in rows)
        lines = [f"problems={self.n_problems} attempts={self.n_attempts}"]
        lines += [f"{name.ljust(width)}  {value:>7}" for name, value in rows]
        return "\n".join(lines)


def _mean(values) -> float | None:
    values = list(values)
    return math.fsum(values) / len(values) if values else None


def aggregate_report(evals: Sequence[ProblemEval], ks: Sequence[int] = (1, 5),
                     combinatorial: bool = False, extra: dict | None = None) -> BenchmarkReport:
    """All benchmark metrics over one run.

    Runtime and memory averages skip attempts whose generation failed; the
    CC average skips candidates that did not parse.
    """
    attempts = [a for ev in evals for a in ev.attempts]
    executed = [a for a in attempts if not a.generation_failed]
    fr, taxonomy = failure_breakdown(evals)
    return BenchmarkReport(
        pass_at={k: pass_at_k(evals, k, combinatorial) for k in sorted(set(ks))},
        apr=average_pass_rate(evals),
        failure_rate=fr,
        taxonomy=taxonomy,
        n_problems=len(evals),
        n_attempts=len(attempts),
        runtime_ms_avg=_mean(a.runtime_ms_mean for a in executed),
        memory_avg_bytes=_mean(a.peak_memory_bytes for a in executed),
        cc_avg=_mean(cc for ev in evals for cc in ev.cc_values if cc is not None),
        extra=dict(extra or {}),
    )


# ---------------------------------------------------------------------------
# Collaboration gain over training


@dataclass(frozen=True)
class CollaborationGainSample:
    step: int
    p_base: float
    p_aux: float
    cg: float | None
    aggregate: str = "apr"

    @classmethod
    def measure(cls, step: int, p_base: float, p_aux: float, aggregate: str = "apr"):
        return cls(step, p_base, p_aux, collaboration_gain(p_base, p_aux), aggregate)

    def to_dict(self) -> dict:
        return {"step": self.step, "p_base": self.p_base, "p_aux": self.p_aux, "cg": self.cg,
                "aggregate": self.aggregate}

    @classmethod
    def from_dict(cls, data: dict) -> "CollaborationGainSample":
        return cls(int(data["step"]), float(data["p_base"]), float(data["p_aux"]), data.get("cg"),
                   data.get("aggregate", "apr"))


def problem_set_pass_rate(evals: Sequence[ProblemEval], strict: bool = False) -> float:
    """The P_coder aggregate for a problem set: mean APR, or Pass@1-style strict success."""
    if strict:
        attempts = [a for ev in evals for a in ev.attempts]
        return sum(a.passed_all for a in attempts) / len(attempts)
    return average_pass_rate(evals)


@dataclass(frozen=True)
class CGSeries:
    samples: tuple[CollaborationGainSample, ...]
    first: float | None
    last: float | None
    max: float | None
    min: float | None
    n_undefined: int

    def rows(self) -> list[tuple[int, float | None]]:
        return [(s.step, s.cg) for s in self.samples]

    def to_tsv(self) -> str:
        lines = ["step\tcg"]
        lines += [f"{step}\t{'nan' if cg is None else repr(cg)}" for step, cg in self.rows()]
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {"first": self.first, "last": self.last, "max": self.max, "min": self.min,
                "n_undefined": self.n_undefined, "n": len(self.samples)}


def cg_timeseries(samples: Sequence[CollaborationGainSample]) -> CGSeries:
    samples = tuple(samples)
    steps = [s.step for s in samples]
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise ValueError(f"CG steps must be strictly increasing, got {steps}")
    defined = [s.cg for s in samples if s.cg is not None]
    return CGSeries(
        samples=samples,
        first=defined[0] if defined else None,
        last=defined[-1] if defined else None,
        max=max(defined) if defined else None,
        min=min(defined) if defined else None,
        n_undefined=len(samples) - len(defined),
    )
