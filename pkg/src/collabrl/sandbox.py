"""Run untrusted candidate programs against test cases.

Each test runs in a fresh guest process inside its own temporary working
directory.  The process gets an address-space cap (via a tiny exec launcher,
so no ``preexec_fn`` is needed in a threaded host), a wall-clock limit, an
output cap and an empty environment.  Peak resident memory is sampled every
few milliseconds from the kernel's per-process high-water mark.

This is not a security boundary.  Network access is not blocked and a
determined program can escape; container or jail integration belongs in a
custom ``GuestRunner.interpreter_command``.
"""

from __future__ import annotations

import os
import re
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import psutil

from .errors import ConfigError

PROGRAM_PLACEHOLDER = "{program}"
SAMPLE_PERIOD_S = 0.005
_HAVE_PROCFS = os.path.exists("/proc/self/status")

# Runs under the host interpreter, applies the memory cap, then execs the guest.
_LAUNCHER = (
    "import os,resource,sys\n"
    "m=int(sys.argv[1])\n"
    "resource.setrlimit(resource.RLIMIT_AS,(m,m))\n"
    "os.execv(sys.argv[2],sys.argv[2:])\n"
)


class InterpreterNotFound(ConfigError):
    """The guest interpreter named by a runner cannot be resolved on this host."""


class TestKind(str, Enum):
    STDIO = "stdio"
    ASSERTION = "assertion"


class Verdict(str, Enum):
    PASS = "Pass"
    WRONG_ANSWER = "WrongAnswer"
    TIMEOUT_ERROR = "TimeoutError"
    VALUE_ERROR = "ValueError"
    TYPE_ERROR = "TypeError"
    OTHER_RUNTIME_ERROR = "OtherRuntimeError"
    SYNTAX_ERROR = "SyntaxError"
    SANDBOX_FAILURE = "SandboxFailure"


@dataclass(frozen=True)
class TestCase:
    id: str
    kind: TestKind = TestKind.STDIO
    input: str = ""
    expected: str | None = None
    check_source: str | None = None

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        object.__setattr__(self, "kind", TestKind(self.kind))
        if self.kind is TestKind.STDIO and self.expected is None:
            raise ValueError(f"stdio test {self.id!r} needs an expected output")
        if self.kind is TestKind.ASSERTION and not (self.check_source or "").strip():
            raise ValueError(f"assertion test {self.id!r} needs check_source")

    @classmethod
    def from_dict(cls, data: dict, default_id: str) -> "TestCase":
        return cls(
            id=str(data.get("id", default_id)),
            kind=TestKind(data.get("kind", "stdio")),
            input=data.get("input") or "",
            expected=data.get("expected"),
            check_source=data.get("check_source"),
        )

    def to_dict(self) -> dict:
        out = {"id": self.id, "kind": self.kind.value}
        if self.kind is TestKind.STDIO:
            out["input"] = self.input
            out["expected"] = self.expected
        else:
            out["check_source"] = self.check_source
        return out


@dataclass(frozen=True)
class ResourceLimits:
    wall_time_ms: int = 2000
    memory_bytes: int = 512 * 1024 * 1024
    output_bytes_cap: int = 64 * 1024

    def __post_init__(self):
        for name in ("wall_time_ms", "memory_bytes", "output_bytes_cap"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise ConfigError(f"ResourceLimits.{name} must be a positive integer, got {value!r}")
        if self.wall_time_ms < 100:
            raise ConfigError("ResourceLimits.wall_time_ms must be at least 100")


def _exception_line(name: str) -> str:
    # Traceback exception lines start at column 0; quoted source lines are indented.
    return rf"(?m)^(?:[\w.]+\.)?(?:{name})\b"


DEFAULT_ERROR_PATTERNS: tuple[tuple[str, Verdict], ...] = (
    (_exception_line("SyntaxError|IndentationError|TabError"), Verdict.SYNTAX_ERROR),
    (_exception_line("TypeError"), Verdict.TYPE_ERROR),
    (_exception_line("ValueError"), Verdict.VALUE_ERROR),
)


@dataclass(frozen=True)
class GuestRunner:
    """How to launch a guest program.  ``{program}`` is replaced by its path."""

    interpreter_command: tuple[str, ...] = (sys.executable, "-I", PROGRAM_PLACEHOLDER)
    error_patterns: tuple[tuple[str, Verdict], ...] = DEFAULT_ERROR_PATTERNS
    baseline_memory_bytes: int = 0
    file_name: str = "main.py"
    env: tuple[tuple[str, str], ...] = (("PYTHONHASHSEED", "0"), ("PYTHONIOENCODING", "utf-8"))

    def __post_init__(self):
        object.__setattr__(self, "interpreter_command", tuple(self.interpreter_command))
        object.__setattr__(
            self,
            "error_patterns",
            tuple((pattern, Verdict(verdict)) for pattern, verdict in self.error_patterns),
        )
        object.__setattr__(self, "env", tuple(tuple(kv) for kv in self.env))
        n_holes = sum(arg.count(PROGRAM_PLACEHOLDER) for arg in self.interpreter_command)
        if n_holes != 1:
            raise ConfigError(
                f"interpreter_command must contain exactly one {PROGRAM_PLACEHOLDER} placeholder"
            )
        for pattern, _ in self.error_patterns:
            try:
                re.compile(pattern)
            except re.error as exc:
                raise ConfigError(f"bad error pattern {pattern!r}: {exc}") from exc

    def argv(self, program_path: str) -> list[str]:
        argv = [arg.replace(PROGRAM_PLACEHOLDER, program_path) for arg in self.interpreter_command]
        argv[0] = resolve_interpreter(argv[0])
        return argv


def resolve_interpreter(name: str) -> str:
    path = shutil.which(name)
    if path is None:
        raise InterpreterNotFound(f"guest interpreter {name!r} not found on this host")
    return os.path.abspath(path)


@dataclass(frozen=True)
class TestOutcome:
    test_id: str
    verdict: Verdict
    runtime_ms: float
    peak_memory_bytes: int
    exit_code: int | None
    stderr_excerpt: str = ""

    __test__ = False

    def to_dict(self) -> dict:
        return {
            "test_id": self.test_id,
            "verdict": self.verdict.value,
            "runtime_ms": self.runtime_ms,
            "peak_memory_bytes": self.peak_memory_bytes,
            "exit_code": self.exit_code,
            "stderr_excerpt": self.stderr_excerpt,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TestOutcome":
        return cls(
            test_id=data["test_id"],
            verdict=Verdict(data["verdict"]),
            runtime_ms=float(data["runtime_ms"]),
            peak_memory_bytes=int(data["peak_memory_bytes"]),
            exit_code=data["exit_code"],
            stderr_excerpt=data.get("stderr_excerpt", ""),
        )


@dataclass(frozen=True)
class ExecutionReport:
    """Judged outcome of one candidate over all tests of a problem.

    Memory figures are bytes of peak resident set size.  ``peak_memory_bytes``
    is the raw peak; ``peak_memory_net_bytes`` subtracts the runner's
    empty-program baseline.
    """

    candidate_id: str
    outcomes: tuple[TestOutcome, ...]
    n_tests: int
    pass_count: int
    runtime_ms_max: float
    runtime_ms_mean: float
    peak_memory_bytes: int
    baseline_memory_bytes: int = 0
    stderr_excerpt: str = ""
    generation_failed: bool = False

    @property
    def pass_rate(self) -> float:
        return self.pass_count / self.n_tests if self.n_tests else 0.0

    @property
    def passed_all(self) -> bool:
        return self.n_tests > 0 and self.pass_count == self.n_tests

    @property
    def verdicts(self) -> list[tuple[str, Verdict]]:
        return [(o.test_id, o.verdict) for o in self.outcomes]

    @property
    def peak_memory_net_bytes(self) -> int:
        return max(0, self.peak_memory_bytes - self.baseline_memory_bytes)

    @classmethod
    def from_outcomes(cls, candidate_id, outcomes, baseline_memory_bytes=0) -> "ExecutionReport":
        outcomes = tuple(outcomes)
        runtimes = [o.runtime_ms for o in outcomes]
        failing = [o.stderr_excerpt for o in outcomes if o.verdict is not Verdict.PASS and o.stderr_excerpt]
        return cls(
            candidate_id=candidate_id,
            outcomes=outcomes,
            n_tests=len(outcomes),
            pass_count=sum(o.verdict is Verdict.PASS for o in outcomes),
            runtime_ms_max=max(runtimes, default=0.0),
            runtime_ms_mean=sum(runtimes) / len(runtimes) if runtimes else 0.0,
            peak_memory_bytes=max((o.peak_memory_bytes for o in outcomes), default=0),
            baseline_memory_bytes=baseline_memory_bytes,
            stderr_excerpt=failing[0] if failing else "",
        )

    @classmethod
    def failed_generation(cls, candidate_id: str, n_tests: int) -> "ExecutionReport":
        """Placeholder for a sample the backend never produced (pass rate 0, nothing run)."""
        return cls(
            candidate_id=candidate_id,
            outcomes=(),
            n_tests=n_tests,
            pass_count=0,
            runtime_ms_max=0.0,
            runtime_ms_mean=0.0,
            peak_memory_bytes=0,
            generation_failed=True,
        )

    def to_dict(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "n_tests": self.n_tests,
            "pass_count": self.pass_count,
            "pass_rate": self.pass_rate,
            "runtime_ms_max": self.runtime_ms_max,
            "runtime_ms_mean": self.runtime_ms_mean,
            "peak_memory_bytes": self.peak_memory_bytes,
            "peak_memory_net_bytes": self.peak_memory_net_bytes,
            "baseline_memory_bytes": self.baseline_memory_bytes,
            "memory_unit": "bytes",
            "generation_failed": self.generation_failed,
            "stderr_excerpt": self.stderr_excerpt,
            "outcomes": [o.to_dict() for o in self.outcomes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExecutionReport":
        return cls(
            candidate_id=data["candidate_id"],
            outcomes=tuple(TestOutcome.from_dict(o) for o in data["outcomes"]),
            n_tests=int(data["n_tests"]),
            pass_count=int(data["pass_count"]),
            runtime_ms_max=float(data["runtime_ms_max"]),
            runtime_ms_mean=float(data["runtime_ms_mean"]),
            peak_memory_bytes=int(data["peak_memory_bytes"]),
            baseline_memory_bytes=int(data.get("baseline_memory_bytes", 0)),
            stderr_excerpt=data.get("stderr_excerpt", ""),
            generation_failed=bool(data.get("generation_failed", False)),
        )


def _normalize_lines(text: str) -> list[str]:
    lines = [line.rstrip() for line in text.replace("\r\n", "\n").split("\n")]
    while lines and not lines[-1]:
        lines.pop()
    return lines


def compare_output(actual: str, expected: str, exact: bool = False) -> bool:
    """Judge-style comparison: trailing whitespace per line and trailing blank lines ignored."""
    if exact:
        return actual == expected
    return _normalize_lines(actual) == _normalize_lines(expected)


def classify_failure(exit_status, stderr: str, timed_out: bool, patterns=DEFAULT_ERROR_PATTERNS) -> Verdict:
    """Map a non-passing run to a verdict.  Timeouts dominate everything else."""
    if timed_out:
        return Verdict.TIMEOUT_ERROR
    if exit_status == 0:
        return Verdict.WRONG_ANSWER
    for pattern, verdict in patterns:
        if re.search(pattern, stderr or ""):
            return Verdict(verdict)
    return Verdict.OTHER_RUNTIME_ERROR


class PeakMemorySampler:
    """Tracks the peak resident memory of one process across repeated ``sample()`` calls.

    On Linux each sample reads the kernel high-water mark (``VmHWM``), so a
    spike between two samples is still seen.  Elsewhere it falls back to the
    current RSS reported by psutil.
    """

    def __init__(self, pid: int):
        self.pid = pid
        self.peak = 0
        self._status_path = f"/proc/{pid}/status"
        try:
            self._proc = psutil.Process(pid)
        except psutil.NoSuchProcess:
            self._proc = None

    def _read_hwm(self) -> int | None:
        try:
            with open(self._status_path, "rb") as fh:
                for line in fh:
                    if line.startswith(b"VmHWM:"):
                        return int(line.split()[1]) * 1024
        except FileNotFoundError:
            return None
        except PermissionError as exc:
            raise SandboxError(f"cannot inspect process {self.pid}: {exc}") from exc
        return None

    def sample(self) -> int:
        if self._proc is None:
            return self.peak
        if _HAVE_PROCFS:
            value = self._read_hwm()
        else:
            try:
                value = self._proc.memory_info().rss
            except (psutil.NoSuchProcess, psutil.ZombieProcess):
                value = None
            except psutil.AccessDenied as exc:
                raise SandboxError(f"cannot inspect process {self.pid}: {exc}") from exc
        if value is not None:
            self.peak = max(self.peak, value)
        return self.peak


class SandboxError(RuntimeError):
    """The host could not spawn or monitor a guest process."""


def measure_peak_memory(process, period_s: float = SAMPLE_PERIOD_S) -> int:
    """Sample a running process until it exits and return its peak RSS in bytes.

    ``process`` may be a pid or anything with a ``pid`` attribute.  The
    process is not reaped here.
    """
    pid = process if isinstance(process, int) else process.pid
    sampler = PeakMemorySampler(pid)
    if sampler._proc is None:
        raise SandboxError(f"process {pid} is not alive")
    while True:
        sampler.sample()
        try:
            if sampler._proc.status() == psutil.STATUS_ZOMBIE:
                break
        except psutil.NoSuchProcess:
            break
        time.sleep(period_s)
    return sampler.peak


@dataclass
class _RawRun:
    exit_code: int | None = None
    stdout: bytes = b""
    stderr: bytes = b""
    timed_out: bool = False
    runtime_ms: float = 0.0
    peak_rss: int = 0
    failure: str | None = None


def _drain(stream, cap: int, sink: bytearray) -> None:
    try:
        while True:
            chunk = stream.read1(65536)
            if not chunk:
                break
            room = cap - len(sink)
            if room > 0:
                sink += chunk[:room]
    except (OSError, ValueError):
        pass
    finally:
        stream.close()


def _feed(stream, data: bytes) -> None:
    try:
        stream.write(data)
    except (BrokenPipeError, OSError, ValueError):
        pass
    finally:
        try:
            stream.close()
        except OSError:
            pass


def _kill_group(pgid: int) -> None:
    try:
        os.killpg(pgid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass


def _run_process(argv: Sequence[str], stdin: bytes, cwd: str, env: dict, limits: ResourceLimits) -> _RawRun:
    run = _RawRun()
    cmd = [sys.executable, "-S", "-c", _LAUNCHER, str(limits.memory_bytes), *argv]
    start = time.perf_counter()
    try:
        proc = subprocess.Popen(
            cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            cwd=cwd,
            env=env,
            start_new_session=True,
            close_fds=True,
        )
    except OSError as exc:
        run.failure = f"spawn failed: {exc}"
        return run

    out_buf, err_buf = bytearray(), bytearray()
    threads = [
        threading.Thread(target=_feed, args=(proc.stdin, stdin), daemon=True),
        threading.Thread(target=_drain, args=(proc.stdout, limits.output_bytes_cap, out_buf), daemon=True),
        threading.Thread(target=_drain, args=(proc.stderr, limits.output_bytes_cap, err_buf), daemon=True),
    ]
    for t in threads:
        t.start()

    sampler = PeakMemorySampler(proc.pid)
    sampler.sample()
    deadline = start + limits.wall_time_ms / 1000.0
    status = 0
    rusage = None
    try:
        while True:
            pid, status, rusage = os.wait4(proc.pid, os.WNOHANG)
            if pid:
                break
            if time.perf_counter() > deadline:
                run.timed_out = True
                _kill_group(proc.pid)
                _, status, rusage = os.wait4(proc.pid, 0)
                break
            sampler.sample()
            time.sleep(SAMPLE_PERIOD_S)
    except SandboxError as exc:
        _kill_group(proc.pid)
        os.wait4(proc.pid, 0)
        run.failure = str(exc)
    except ChildProcessError as exc:
        run.failure = f"lost track of child: {exc}"
    run.runtime_ms = (time.perf_counter() - start) * 1000.0
    # Reap-time cleanup: no stray grandchildren may outlive the run.
    _kill_group(proc.pid)
    proc.returncode = os.waitstatus_to_exitcode(status) if rusage is not None else -1
    for t in threads:
        t.join(timeout=2.0)

    run.exit_code = proc.returncode
    run.stdout = bytes(out_buf)
    run.stderr = bytes(err_buf)
    # ru_maxrss is not used: it inherits the forked host image's RSS.
    run.peak_rss = sampler.peak
    return run


def _guest_env(runner: GuestRunner) -> dict:
    return dict(runner.env)


def _decode(data: bytes) -> str:
    return data.decode("utf-8", errors="replace")


def run_test(source: str, test: TestCase, limits: ResourceLimits, runner: GuestRunner,
             exact: bool = False) -> TestOutcome:
    """Run one test in a fresh process and working directory."""
    program = source if test.kind is TestKind.STDIO else f"{source}\n\n{test.check_source}\n"
    stdin = test.input if test.kind is TestKind.STDIO else ""
    # The guest runs one level below a private parent so "../" writes stay contained and get removed.
    parent = tempfile.mkdtemp(prefix="collabrl-")
    workdir = os.path.join(parent, "work")
    try:
        os.mkdir(workdir)
        path = os.path.join(workdir, runner.file_name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(program)
        raw = _run_process(runner.argv(path), stdin.encode("utf-8"), workdir, _guest_env(runner), limits)
    finally:
        shutil.rmtree(parent, ignore_errors=True)

    # Strip the random working directory so stderr is reproducible across runs.
    stderr = _decode(raw.stderr).replace(workdir + os.sep, "")
    if raw.failure is not None:
        verdict = Verdict.SANDBOX_FAILURE
        stderr = raw.failure
    elif raw.timed_out:
        verdict = Verdict.TIMEOUT_ERROR
    elif raw.exit_code == 0 and (
        test.kind is TestKind.ASSERTION or compare_output(_decode(raw.stdout), test.expected, exact)
    ):
        verdict = Verdict.PASS
    else:
        verdict = classify_failure(raw.exit_code, stderr, False, runner.error_patterns)
    return TestOutcome(
        test_id=test.id,
        verdict=verdict,
        runtime_ms=raw.runtime_ms,
        peak_memory_bytes=raw.peak_rss,
        exit_code=raw.exit_code,
        stderr_excerpt=stderr[: limits.output_bytes_cap],
    )


def _check_tests(tests: Sequence[TestCase]) -> None:
    if not tests:
        raise ValueError("at least one test case is required")
    ids = [t.id for t in tests]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate test ids: {ids}")


def execute_candidate(source: str, tests: Sequence[TestCase], limits: ResourceLimits | None = None,
                      runner: GuestRunner | None = None, candidate_id: str = "candidate",
                      exact: bool = False) -> ExecutionReport:
    limits = limits or ResourceLimits()
    runner = runner or GuestRunner()
    _check_tests(tests)
    resolve_interpreter(runner.interpreter_command[0])
    outcomes = [run_test(source, t, limits, runner, exact) for t in tests]
    return ExecutionReport.from_outcomes(candidate_id, outcomes, runner.baseline_memory_bytes)


def calibrate_baseline(runner: GuestRunner | None = None, limits: ResourceLimits | None = None,
                       repeats: int = 3) -> GuestRunner:
    """Return a copy of ``runner`` whose baseline is the peak RSS of an empty program."""
    runner = runner or GuestRunner()
    limits = limits or ResourceLimits()
    probe = TestCase(id="baseline", kind=TestKind.ASSERTION, check_source="pass")
    peaks = []
    for _ in range(repeats):
        outcome = run_test("", probe, limits, runner)
        if outcome.verdict is not Verdict.PASS:
            raise SandboxError(f"empty program did not run cleanly: {outcome.stderr_excerpt}")
        peaks.append(outcome.peak_memory_bytes)
    return replace(runner, baseline_memory_bytes=min(peaks))


@dataclass
class JudgePool:
    """Bounded pool of sandbox workers.  At most ``workers`` guest processes run at once."""

    workers: int = 4
    limits: ResourceLimits = field(default_factory=ResourceLimits)
    runner: GuestRunner = field(default_factory=GuestRunner)
    runners: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self._executor = ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="judge")

    def runner_for(self, hint: str | None) -> GuestRunner:
        if hint is None:
            return self.runner
        try:
            return self.runners[hint]
        except KeyError:
            raise ConfigError(f"unknown guest runner {hint!r}") from None

    def judge(self, source: str, tests: Sequence[TestCase], candidate_id: str = "candidate",
              runner_hint: str | None = None) -> ExecutionReport:
        return execute_candidate(source, tests, self.limits, self.runner_for(runner_hint), candidate_id)

    def submit(self, source, tests, candidate_id="candidate", runner_hint=None):
        return self._executor.submit(self.judge, source, tests, candidate_id, runner_hint)

    def judge_many(self, jobs: Iterable[tuple[str, str, Sequence[TestCase]]],
                   runner_hint: str | None = None) -> list[ExecutionReport]:
        """Judge ``(candidate_id, source, tests)`` jobs concurrently; results keep job order."""
        futures = [self.submit(src, tests, cid, runner_hint) for cid, src, tests in jobs]
        return [f.result() for f in futures]

    def close(self) -> None:
        self._executor.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
