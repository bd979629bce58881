import json
import subprocess
import sys
import time

import psutil
import pytest
from hypothesis import given, strategies as st

from collabrl.errors import ConfigError
from collabrl.sandbox import (
    DEFAULT_ERROR_PATTERNS,
    ExecutionReport,
    GuestRunner,
    InterpreterNotFound,
    JudgePool,
    ResourceLimits,
    TestCase,
    TestOutcome,
    Verdict,
    calibrate_baseline,
    classify_failure,
    compare_output,
    execute_candidate,
    measure_peak_memory,
)
from support import GUEST

MANIFEST = json.loads((GUEST / "manifest.json").read_text())
FAST = ResourceLimits(wall_time_ms=1000)


def manifest_case(entry) -> TestCase:
    return TestCase(
        id=entry["file"],
        kind=entry["kind"],
        input=entry.get("input", ""),
        expected=entry.get("expected"),
        check_source=entry.get("check_source"),
    )


# -- output comparison -------------------------------------------------------

@pytest.mark.parametrize(
    "actual, expected, same",
    [
        ("5\n", "5", True),
        ("a b \nc", "a b\nc", True),
        ("5", "6", False),
        ("1\n2\n\n\n", "1\n2", True),
        ("1\r\n2\r\n", "1\n2", True),
        ("\n5", "5", False),
        (" 5", "5", False),
    ],
)
def test_compare_output(actual, expected, same):
    assert compare_output(actual, expected) is same


def test_compare_output_exact_mode():
    assert compare_output("5", "5", exact=True)
    assert not compare_output("5\n", "5", exact=True)


@given(st.text(alphabet="ab \n", max_size=30))
def test_compare_output_ignores_trailing_whitespace(text):
    padded = "\n".join(line + "  " for line in text.split("\n")) + "\n\n"
    assert compare_output(padded, text)


# -- classification --------------------------------------------------------

TRACEBACK_TYPE = (
    "Traceback (most recent call last):\n"
    '  File "main.py", line 2, in <module>\n'
    "    print(1 + 'a')\n"
    "TypeError: unsupported operand type(s) for +: 'int' and 'str'\n"
)


def test_timeout_dominates_stderr():
    assert classify_failure(-9, "ValueError: boom", True, DEFAULT_ERROR_PATTERNS) is Verdict.TIMEOUT_ERROR


def test_clean_exit_mismatch_is_wrong_answer():
    assert classify_failure(0, "", False) is Verdict.WRONG_ANSWER


def test_recorded_type_error_traceback():
    assert classify_failure(1, TRACEBACK_TYPE, False) is Verdict.TYPE_ERROR


def test_unmatched_nonzero_exit_is_other():
    assert classify_failure(1, "ZeroDivisionError: division by zero", False) is Verdict.OTHER_RUNTIME_ERROR


def test_pattern_in_quoted_source_line_is_ignored():
    stderr = (
        "Traceback (most recent call last):\n"
        '  File "main.py", line 1, in <module>\n'
        "    raise KeyError('ValueError')\n"
        "KeyError: 'ValueError'\n"
    )
    assert classify_failure(1, stderr, False) is Verdict.OTHER_RUNTIME_ERROR


def test_first_pattern_wins():
    patterns = ((r"Boom", Verdict.VALUE_ERROR), (r"Boom", Verdict.TYPE_ERROR))
    assert classify_failure(1, "Boom", False, patterns) is Verdict.VALUE_ERROR


# -- types -------------------------------------------------------------------

def test_testcase_validation():
    with pytest.raises(ValueError):
        TestCase("a", "stdio", "1")
    with pytest.raises(ValueError):
        TestCase("a", "assertion", check_source="  ")


@pytest.mark.parametrize("kwargs", [{"wall_time_ms": 50}, {"memory_bytes": 0}, {"output_bytes_cap": -1}])
def test_resource_limits_validation(kwargs):
    with pytest.raises(ConfigError):
        ResourceLimits(**kwargs)


def test_runner_needs_one_placeholder():
    with pytest.raises(ConfigError):
        GuestRunner(interpreter_command=("python3", "x.py"))
    with pytest.raises(ConfigError):
        GuestRunner(interpreter_command=("python3", "{program}", "{program}"))


def test_missing_interpreter_is_config_error():
    runner = GuestRunner(interpreter_command=("no-such-interpreter-xyz", "{program}"))
    with pytest.raises(InterpreterNotFound):
        execute_candidate("print(1)", [TestCase("t", "stdio", "", "1")], FAST, runner)


def test_empty_tests_rejected():
    with pytest.raises(ValueError):
        execute_candidate("print(1)", [])


@given(st.lists(st.sampled_from(list(Verdict)), min_size=1, max_size=12))
def test_report_pass_rate_identity(verdicts):
    outcomes = [TestOutcome(f"t{i}", v, 1.0, 10, 0) for i, v in enumerate(verdicts)]
    report = ExecutionReport.from_outcomes("c", outcomes)
    assert report.pass_rate * report.n_tests == pytest.approx(report.pass_count, abs=1e-12)
    assert report.pass_count == sum(v is Verdict.PASS for v in verdicts)
    assert 0.0 <= report.pass_rate <= 1.0
    assert ExecutionReport.from_dict(json.loads(json.dumps(report.to_dict()))) == report


# -- execution -------------------------------------------------------------

def test_echo_program_passes_all():
    tests = [TestCase(f"t{i}", "stdio", f"line {i}\n", f"line {i}") for i in range(3)]
    report = execute_candidate("print(input())", tests, FAST)
    assert report.pass_rate == 1.0
    assert [v for _, v in report.verdicts] == [Verdict.PASS] * 3


def test_infinite_loop_times_out_everywhere():
    tests = [TestCase(f"t{i}", "stdio", "", "x") for i in range(2)]
    report = execute_candidate("while True:\n    pass\n", tests, ResourceLimits(wall_time_ms=500))
    assert [v for _, v in report.verdicts] == [Verdict.TIMEOUT_ERROR] * 2
    assert report.pass_rate == 0.0
    assert all(o.runtime_ms < 3000 for o in report.outcomes)


def test_value_error_on_second_of_four():
    source = "n = int(input())\nif n == 2:\n    raise ValueError('bad')\nprint(n * n)\n"
    tests = [TestCase(f"t{i}", "stdio", f"{i}\n", str(i * i)) for i in (1, 2, 3, 4)]
    report = execute_candidate(source, tests, FAST)
    assert [v for _, v in report.verdicts] == [Verdict.PASS, Verdict.VALUE_ERROR, Verdict.PASS, Verdict.PASS]
    assert report.pass_rate == 0.75
    assert "ValueError: bad" in report.stderr_excerpt


def test_deterministic_program_gives_identical_reports():
    tests = [TestCase("a", "stdio", "3 4\n", "7"), TestCase("b", "stdio", "x y\n", "0")]
    source = (GUEST / "ve_int.py").read_text()
    first = execute_candidate(source, tests, FAST)
    second = execute_candidate(source, tests, FAST)
    assert first.verdicts == second.verdicts
    assert [o.stderr_excerpt for o in first.outcomes] == [o.stderr_excerpt for o in second.outcomes]


def test_output_cap_truncates():
    limits = ResourceLimits(wall_time_ms=2000, output_bytes_cap=1024)
    report = execute_candidate("print('x' * 100000)", [TestCase("t", "stdio", "", "x")], limits)
    assert report.verdicts == [("t", Verdict.WRONG_ANSWER)]


def test_guest_environment_is_empty():
    source = "import os\nprint(sorted(k for k in os.environ if k not in ('PYTHONHASHSEED', 'PYTHONIOENCODING', 'LC_CTYPE')))"
    report = execute_candidate(source, [TestCase("t", "stdio", "", "[]")], FAST)
    assert report.passed_all, report.outcomes


def test_stray_children_are_killed():
    marker = "collabrl-orphan-marker"
    source = (
        "import subprocess, sys\n"
        f"subprocess.Popen([sys.executable, '-c', 'import time; time.sleep(30)', '{marker}'])\n"
        "print('ok')\n"
    )
    report = execute_candidate(source, [TestCase("t", "stdio", "", "ok")], FAST)
    assert report.passed_all
    time.sleep(0.2)
    survivors = []
    for proc in psutil.process_iter(["cmdline"]):
        if marker in (proc.info["cmdline"] or []):
            survivors.append(proc)
    assert survivors == []


def test_memory_cap_turns_into_failure():
    limits = ResourceLimits(wall_time_ms=2000, memory_bytes=200 * 2**20)
    report = execute_candidate("x = bytearray(400 * 2**20)\nprint(1)", [TestCase("t", "stdio", "", "1")], limits)
    assert report.verdicts == [("t", Verdict.OTHER_RUNTIME_ERROR)]


# -- memory ------------------------------------------------------------------

def test_measure_peak_memory_of_live_process():
    proc = subprocess.Popen([sys.executable, "-c", "import time; b = bytearray(30 * 2**20); time.sleep(0.3)"])
    try:
        peak = measure_peak_memory(proc)
    finally:
        proc.wait()
    assert peak >= 30 * 2**20


def test_empty_program_is_near_baseline():
    runner = calibrate_baseline(limits=FAST)
    report = execute_candidate("", [TestCase("t", "assertion", check_source="pass")], FAST, runner)
    assert runner.baseline_memory_bytes > 0
    assert report.peak_memory_bytes >= 0
    assert abs(report.peak_memory_bytes - runner.baseline_memory_bytes) <= 0.25 * runner.baseline_memory_bytes


def test_allocator_peaks_are_reproducible():
    source = (GUEST / "alloc_50mb.py").read_text()
    test = [TestCase("t", "stdio", "", "True")]
    a = execute_candidate(source, test, FAST).peak_memory_bytes
    b = execute_candidate(source, test, FAST).peak_memory_bytes
    assert abs(a - b) <= 0.2 * max(a, b)


# -- pool ----------------------------------------------------------------------

def test_judge_pool_keeps_job_order():
    test = [TestCase("t", "stdio", "", "1")]
    jobs = [(f"c{i}", f"print({i % 2})", test) for i in range(6)]
    with JudgePool(workers=3, limits=FAST) as pool:
        reports = pool.judge_many(jobs)
    assert [r.candidate_id for r in reports] == [f"c{i}" for i in range(6)]
    assert [r.passed_all for r in reports] == [bool(i % 2) for i in range(6)]


def test_judge_pool_unknown_runner_hint():
    with JudgePool(workers=1, limits=FAST) as pool:
        with pytest.raises(ConfigError):
            pool.runner_for("ruby")


@pytest.mark.parametrize("entry", MANIFEST, ids=[e["file"] for e in MANIFEST])
def test_guest_fixture_verdict(entry):
    source = (GUEST / entry["file"]).read_text()
    report = execute_candidate(source, [manifest_case(entry)], FAST)
    assert report.verdicts[0][1].value == entry["verdict"], report.outcomes[0].stderr_excerpt
