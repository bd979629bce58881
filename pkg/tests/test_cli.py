import json
import subprocess
import sys

import pytest

from collabrl.cli import RunConfig, load_config, main, write_atomic
from collabrl.dataset import Problem, load_dataset
from collabrl.errors import ConfigError
from collabrl.sandbox import TestCase
from support import (
    BAD_SUM,
    GOOD_SUM,
    ReplayBuilder,
    fenced,
    plan,
    sum_problem,
    write_dataset,
    write_workspace,
)

PLAN_A = plan("add the two numbers")
PLAN_B = plan("multiply the two numbers")


def problem_line(pid, tests=None):
    tests = [{"kind": "stdio", "input": "1 2\n", "expected": "3"}] if tests is None else tests
    return json.dumps({"id": pid, "prompt": f"Problem {pid}", "tests": tests})


# -- dataset ---------------------------------------------------------------------

def test_dataset_keeps_file_order(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text("\n".join(problem_line(p) for p in ("b", "a", "c")) + "\n\n")
    problems = load_dataset(path)
    assert [p.id for p in problems] == ["b", "a", "c"]
    assert problems[0].tests[0].id == "t0"


def test_dataset_duplicate_cites_line(tmp_path):
    lines = [problem_line(f"p{i}") for i in range(6)] + [problem_line("p2")]
    path = tmp_path / "d.jsonl"
    path.write_text("\n".join(lines))
    with pytest.raises(ConfigError, match=r"d\.jsonl:7: duplicate problem id 'p2' \(first on line 3\)"):
        load_dataset(path)


@pytest.mark.parametrize(
    "line",
    [
        problem_line("p", tests=[]),
        "{not json",
        json.dumps({"id": "p", "prompt": "x", "tests": [{"kind": "stdio", "input": ""}]}),
        json.dumps({"id": "p", "prompt": "x", "tests": [{"kind": "shell", "input": "", "expected": ""}]}),
        json.dumps({"id": "", "prompt": "x", "tests": [{"kind": "assertion", "check_source": "pass"}]}),
        json.dumps({"id": "p", "prompt": "x", "tests": "none"}),
        json.dumps({"id": "p", "prompt": "x", "tests": [], "difficulty": 3}),
        json.dumps(["p"]),
    ],
)
def test_dataset_rejects_bad_line(tmp_path, line):
    path = tmp_path / "d.jsonl"
    path.write_text(problem_line("ok") + "\n" + line + "\n")
    with pytest.raises(ConfigError, match=r"d\.jsonl:2:"):
        load_dataset(path)


def test_dataset_roundtrip(tmp_path):
    problem = Problem("q", "Define add.", (TestCase("a", "assertion", check_source="assert add(1, 1) == 2"),), "py")
    [loaded] = load_dataset(write_dataset(tmp_path / "d.jsonl", [problem]))
    assert loaded == problem


# -- config ----------------------------------------------------------------------

def test_config_rejects_unknown_keys_and_inline_secrets(tmp_path):
    with pytest.raises(ConfigError, match="unknown config keys"):
        RunConfig.from_dict({"datasets": "x"})
    with pytest.raises(ConfigError, match="environment"):
        RunConfig.from_dict({"backends": {"coder": {"kind": "HttpChat", "endpoint": "http://x", "model": "m",
                                                    "api_key": "sk-1"}}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"chain": ["planner", "oracle"]})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"rollout": {"n_thoughts": 0}})
    bad = tmp_path / "c.json"
    bad.write_text("{")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(str(bad))


def test_fingerprint_ignores_output_location():
    a = RunConfig.from_dict({"output_dir": "a", "workers": {"sandbox": 2}})
    b = RunConfig.from_dict({"output_dir": "b", "workers": {"sandbox": 8}})
    assert a.fingerprint == b.fingerprint
    assert a.fingerprint != RunConfig.from_dict({"seed": 1}).fingerprint


def test_write_atomic_replaces(tmp_path):
    target = tmp_path / "sub" / "f.txt"
    write_atomic(target, "one")
    write_atomic(target, "two")
    assert target.read_text() == "two"
    assert [p.name for p in target.parent.iterdir()] == ["f.txt"]


# -- judge -----------------------------------------------------------------------

def judge_workspace(tmp_path, **config):
    problems = [sum_problem("p1", 3)]
    return write_workspace(tmp_path, problems, ReplayBuilder(), **config)


@pytest.mark.parametrize("code, status", [(GOOD_SUM, 0), (BAD_SUM, 1)])
def test_judge_exit_codes(tmp_path, capsys, code, status):
    cfg = judge_workspace(tmp_path)
    source = tmp_path / "solution.py"
    source.write_text(code)
    assert main(["judge", str(source), "--problem", "p1", "--config", str(cfg)]) == status
    out = capsys.readouterr().out
    assert out.startswith("config fingerprint: ")
    report = json.loads(out.splitlines()[1])
    assert report["pass_count"] == (3 if status == 0 else 0)
    if status:
        assert "WrongAnswer" in out


def test_judge_unknown_problem_is_usage_error(tmp_path, capsys):
    cfg = judge_workspace(tmp_path)
    source = tmp_path / "solution.py"
    source.write_text(GOOD_SUM)
    assert main(["judge", str(source), "--problem", "nope", "--config", str(cfg)]) == 2
    assert "nope" in capsys.readouterr().err


def test_missing_interpreter_is_environment_error(tmp_path):
    problem = Problem("p1", "Sum.", sum_problem().tests, guest_hint="ghost")
    cfg = write_workspace(tmp_path, [problem], ReplayBuilder(),
                          runners={"ghost": {"interpreter_command": ["no-such-python-xyz", "{program}"]}})
    source = tmp_path / "solution.py"
    source.write_text(GOOD_SUM)
    assert main(["judge", str(source), "--problem", "p1", "--config", str(cfg)]) == 3


def test_usage_errors(tmp_path):
    assert main(["rollout"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["eval", "--config", str(tmp_path / "absent.json")]) == 2


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "collabrl.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for command in ("judge", "rollout", "eval", "report"):
        assert command in proc.stdout


# -- rollout ---------------------------------------------------------------------

def planner_workspace(tmp_path):
    problems = [sum_problem("p1"), sum_problem("p2")]
    replay = ReplayBuilder()
    for p in problems:
        replay.planner(p, [PLAN_A, PLAN_B])
        replay.coder(p, PLAN_A, [fenced(GOOD_SUM)] * 2)
        replay.coder(p, PLAN_B, [fenced(BAD_SUM)] * 2)
    return write_workspace(tmp_path, problems, replay, rollout={"n_thoughts": 2, "m_codes_per_thought": 2})


def test_planner_rollout_records(tmp_path, capsys):
    cfg = planner_workspace(tmp_path)
    outs = [tmp_path / "run1", tmp_path / "run2"]
    for out in outs:
        assert main(["rollout", "--stage", "planner", "--config", str(cfg), "--out", str(out)]) == 0
    first, second = [(o / "records.jsonl").read_bytes() for o in outs]
    assert first == second
    rows = [json.loads(line) for line in first.decode().splitlines()]
    assert len(rows) == 4
    assert [r["group_id"] for r in rows] == ["p1/planner/0"] * 2 + ["p2/planner/0"] * 2
    assert rows[0]["advantage"] > 0 > rows[1]["advantage"]
    printed = capsys.readouterr().out
    assert printed.count("config fingerprint: ") == 2
    assert "p1 [planner] rewards:" in printed


def test_coder_rollout_five_per_problem(tmp_path):
    problems = [sum_problem("p1"), sum_problem("p2")]
    replay = ReplayBuilder()
    for p in problems:
        replay.planner(p, [PLAN_A])
        replay.coder(p, PLAN_A, [fenced(GOOD_SUM)] + [fenced(BAD_SUM)] * 4)
    cfg = write_workspace(tmp_path, problems, replay, rollout={"z_coder_samples": 5})
    assert main(["rollout", "--stage", "coder", "--config", str(cfg)]) == 0
    rows = [json.loads(line) for line in (tmp_path / "out" / "records.jsonl").read_text().splitlines()]
    assert [r["problem_id"] for r in rows] == ["p1"] * 5 + ["p2"] * 5
    assert {r["stage"] for r in rows} == {"coder"}
    assert rows[0]["r_space"] == 1.0


def test_rollout_with_cg_then_report(tmp_path, capsys):
    problems = [sum_problem("p1"), sum_problem("p2")]
    replay = ReplayBuilder()
    for p in problems:
        replay.planner(p, [PLAN_A])
        replay.coder(p, PLAN_A, [fenced(GOOD_SUM)])
        replay.coder(p, None, [fenced(BAD_SUM)])
    cfg = write_workspace(tmp_path, problems, replay, rollout={"n_thoughts": 1, "m_codes_per_thought": 1})
    for step in (0, 1):
        assert main(["rollout", "--stage", "planner", "--cg", "--step", str(step), "--config", str(cfg)]) == 0
    cg_rows = [json.loads(line) for line in (tmp_path / "out" / "cg.jsonl").read_text().splitlines()]
    assert [r["step"] for r in cg_rows] == [0, 1]
    assert cg_rows[0]["cg"] == 1.0 and cg_rows[0]["p_base"] == 0.0
    capsys.readouterr()
    report_dir = tmp_path / "report"
    assert main(["report", str(tmp_path / "out"), "--out", str(report_dir)]) == 0
    printed = capsys.readouterr().out
    table = (report_dir / "traces_table.txt").read_text().splitlines()
    assert len(table) == 1 + len(problems)
    assert table[1].startswith("p1")
    series = (report_dir / "cg_series.tsv").read_text().splitlines()
    assert series[0] == "step\tcg" and series[1] == "0\t1.0"
    assert "collaboration gain series" in printed


def test_report_empty_directory(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == 0
    assert "no traces found" in capsys.readouterr().out


def test_report_corrupt_trace_names_file(tmp_path, capsys):
    (tmp_path / "traces.jsonl").write_text('{"problem_id": "p"}\n')
    assert main(["report", str(tmp_path)]) == 2
    assert "traces.jsonl:1" in capsys.readouterr().err


# -- eval ------------------------------------------------------------------------

def test_eval_pass_at_1(tmp_path, capsys):
    problems = [sum_problem("p1"), sum_problem("p2")]
    replay = ReplayBuilder()
    for p, code in zip(problems, (GOOD_SUM, BAD_SUM)):
        replay.planner(p, [PLAN_A])
        replay.coder(p, PLAN_A, [fenced(code)])
    cfg = write_workspace(tmp_path, problems, replay)
    reports = []
    for out in ("e1", "e2"):
        assert main(["eval", "--k", "1", "--config", str(cfg), "--out", str(tmp_path / out)]) == 0
        reports.append(json.loads((tmp_path / out / "report.jsonl").read_text()))
    assert reports[0]["pass_at"] == {"1": 0.5}
    assert reports[0]["apr"] == 0.5 and reports[0]["failure_rate"] == 0.5
    strip = lambda r: {k: v for k, v in r.items() if k not in ("runtime_ms_avg", "memory_avg_bytes")}  # noqa: E731
    assert strip(reports[0]) == strip(reports[1])
    assert "Pass@1" in (tmp_path / "e1" / "report.txt").read_text()


def test_eval_all_timeouts(tmp_path):
    problems = [sum_problem("p1")]
    replay = ReplayBuilder().planner(problems[0], [PLAN_A] * 2)
    replay.coder(problems[0], PLAN_A, [fenced("while True:\n    pass\n")] * 2)
    cfg = write_workspace(tmp_path, problems, replay, limits={"wall_time_ms": 300})
    assert main(["eval", "--k", "1", "2", "--config", str(cfg)]) == 0
    report = json.loads((tmp_path / "out" / "report.jsonl").read_text())
    assert report["failure_rate"] == 1.0 and report["taxonomy"]["TOE"] == 1.0
    assert report["pass_at"] == {"1": 0.0, "2": 0.0}
