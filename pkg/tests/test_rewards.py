import math

import mpmath
import pytest
from hypothesis import assume, given, strategies as st

from collabrl.analysis import ComplexityClass, ComplexityEstimate
from collabrl.errors import ConfigError
from collabrl.rewards import (
    MEGABYTE,
    MemoryBasis,
    MemoryNormalizer,
    RewardConfig,
    SigmoidConfig,
    Stage,
    TimeMode,
    accuracy_reward,
    coder_group_rewards,
    coder_reward,
    planner_reward,
    scaled_sigmoid,
    space_reward,
    target_memory,
    time_reward,
)
from support import make_report, report_with_rate

MB = 10**6
rates = st.floats(0.0, 1.0, allow_nan=False)


def sigma_ref(x, k=10, c=0.5) -> float:
    mpmath.mp.dps = 50
    return float(1 / (1 + mpmath.e ** (-k * (mpmath.mpf(x) - c))))


def estimate(rho: float, s: float) -> ComplexityEstimate:
    return ComplexityEstimate(ComplexityClass.QUADRATIC, rho, {ComplexityClass.QUADRATIC: rho}, s)


# -- sigmoid -----------------------------------------------------------------

def test_sigmoid_midpoint():
    assert scaled_sigmoid(0.5) == 0.5
    assert scaled_sigmoid(3.0, SigmoidConfig(k=2, c=3.0)) == 0.5


def test_sigmoid_reference_value():
    assert scaled_sigmoid(1.0) == pytest.approx(sigma_ref(1.0), abs=1e-15)
    assert scaled_sigmoid(1.0) == pytest.approx(0.993307, abs=1e-6)


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_sigmoid_monotone(a, b):
    assume(a < b)
    assert scaled_sigmoid(a) <= scaled_sigmoid(b)


@given(st.floats(-1e300, 1e300))
def test_sigmoid_never_overflows(x):
    y = scaled_sigmoid(x)
    assert 0.0 <= y <= 1.0 and math.isfinite(y)


def test_sigmoid_rejects_nonpositive_k():
    with pytest.raises(ConfigError):
        SigmoidConfig(k=0)


# -- accuracy ----------------------------------------------------------------

def test_accuracy_examples():
    assert accuracy_reward([0.5, 0.5, 0.5]) == 0.5
    assert accuracy_reward([0.0, 1.0]) == pytest.approx((sigma_ref(0) + sigma_ref(1)) / 2, abs=1e-15)
    assert accuracy_reward([0.0, 1.0]) == pytest.approx(0.5, abs=1e-15)
    assert accuracy_reward([1.0] * 4) == pytest.approx(0.993307, abs=1e-6)


def test_accuracy_rejects_empty_and_out_of_range():
    with pytest.raises(ValueError):
        accuracy_reward([])
    with pytest.raises(ValueError):
        accuracy_reward([1.2])


def test_raw_accuracy_mode():
    assert accuracy_reward([0.25, 0.75], RewardConfig(raw_accuracy=True)) == 0.5


@given(st.lists(rates, min_size=1, max_size=8), st.randoms())
def test_accuracy_permutation_invariant(ps, rnd):
    shuffled = list(ps)
    rnd.shuffle(shuffled)
    assert accuracy_reward(shuffled) == pytest.approx(accuracy_reward(ps), abs=1e-15)


@given(st.lists(st.floats(0.0, 0.9), min_size=1, max_size=8), st.data())
def test_accuracy_strictly_increasing(ps, data):
    i = data.draw(st.integers(0, len(ps) - 1))
    bumped = list(ps)
    bumped[i] = min(1.0, ps[i] + data.draw(st.floats(0.01, 0.1)))
    assert accuracy_reward(bumped) > accuracy_reward(ps)


# -- time --------------------------------------------------------------------

def test_confidence_cost_anchors():
    assert time_reward([estimate(1.0, 0.0)]) == 1.0
    assert time_reward([estimate(0.9, 0.6)]) == pytest.approx(0.36, abs=1e-12)


def test_sigmoid_cost_anchors():
    cfg = RewardConfig(time_mode=TimeMode.SIGMOID_COST)
    assert time_reward([estimate(1.0, 0.0)], cfg) == 0.5
    assert time_reward([estimate(1.0, 1.0)], cfg) == pytest.approx(sigma_ref(-1, 10, 0), rel=1e-12)
    assert time_reward([estimate(1.0, 1.0)], cfg) == pytest.approx(0.0000454, abs=1e-7)


@pytest.mark.parametrize("mode", list(TimeMode))
@given(rho=rates, s1=rates, s2=rates)
def test_time_reward_non_increasing_in_cost(mode, rho, s1, s2):
    assume(s1 <= s2)
    cfg = RewardConfig(time_mode=mode)
    assert time_reward([estimate(rho, s2)], cfg) <= time_reward([estimate(rho, s1)], cfg)


def test_time_reward_rejects_empty():
    with pytest.raises(ValueError):
        time_reward([])


# -- space ---------------------------------------------------------------------

def test_target_memory_examples():
    group = [report_with_rate(2, 2, memory=12 * MB), report_with_rate(2, 2, memory=9 * MB),
             report_with_rate(1, 2, memory=1 * MB)]
    assert target_memory(group) == 9 * MB
    assert target_memory([report_with_rate(0, 2), report_with_rate(1, 2)]) is None
    assert target_memory([report_with_rate(1, 1, memory=5), report_with_rate(1, 1, memory=5)]) == 5


def test_space_reward_examples():
    target = 9 * MB
    assert space_reward(report_with_rate(1, 2, memory=target), target) == 0.0
    assert space_reward(report_with_rate(2, 2, memory=target), None) == 0.0
    assert space_reward(report_with_rate(2, 2, memory=target), target) == 1.0
    assert space_reward(report_with_rate(2, 2, memory=2 * target), target) == pytest.approx(math.exp(-1), abs=1e-9)


def test_space_reward_absolute_megabytes():
    cfg = RewardConfig(memory_normalizer=MemoryNormalizer.ABSOLUTE_MEGABYTES)
    r = space_reward(report_with_rate(1, 1, memory=11 * MEGABYTE), 10 * MEGABYTE, cfg)
    assert r == pytest.approx(math.exp(-1), abs=1e-12)


def test_space_reward_net_basis():
    cfg = RewardConfig(memory_basis=MemoryBasis.NET)
    base = make_report(["Pass"], memory=30)
    report = type(base)(**{**base.__dict__, "baseline_memory_bytes": 10})
    assert space_reward(report, 20, cfg) == 1.0


@given(st.integers(1, 10**9), st.integers(0, 10**9), st.integers(0, 10**9))
def test_space_reward_decreasing_in_gap(target, g1, g2):
    assume(g1 < g2)
    near = space_reward(report_with_rate(1, 1, memory=target + g1), target)
    far = space_reward(report_with_rate(1, 1, memory=target + g2), target)
    assert 0.0 <= far <= near <= 1.0


# -- totals --------------------------------------------------------------------

def test_planner_total_is_sum():
    cfg = RewardConfig()
    rec = planner_reward([0.0, 1.0], [estimate(0.9, 0.6), estimate(0.9, 0.6)], cfg, "x")
    assert rec.r_acc == pytest.approx(0.5) and rec.r_time == pytest.approx(0.36)
    assert rec.r_total == pytest.approx(0.86, abs=1e-12)
    assert rec.stage is Stage.PLANNER and rec.r_space is None and rec.time_mode == "ConfidenceCost"


def test_planner_all_fail_worst_cost():
    rec = planner_reward([0.0, 0.0, 0.0], [estimate(0.9, 1.0)] * 3)
    assert rec.r_total == pytest.approx(sigma_ref(0.0), abs=1e-15)
    assert rec.r_total == pytest.approx(0.006693, abs=1e-6)


def test_planner_single_snippet_reduces():
    rec = planner_reward([0.7], [estimate(0.8, 0.25)])
    assert rec.r_total == pytest.approx(scaled_sigmoid(0.7) + 0.8 * 0.75, abs=1e-15)


def test_planner_length_mismatch():
    with pytest.raises(ValueError):
        planner_reward([1.0], [estimate(1, 0), estimate(1, 0)])


def test_coder_reward_examples():
    full = report_with_rate(3, 3, memory=9 * MB)
    no_lambda = coder_reward(full, 9 * MB, RewardConfig(lam=0.0))
    assert no_lambda.r_total == no_lambda.r_acc
    rec = coder_reward(full, 9 * MB)
    assert rec.r_total == pytest.approx(sigma_ref(1.0) + 0.5, abs=1e-12)
    assert rec.r_total == pytest.approx(1.493307, abs=1e-6)
    zero = coder_reward(report_with_rate(0, 3), 9 * MB)
    assert zero.r_space == 0.0 and zero.r_total == pytest.approx(0.006693, abs=1e-6)


def test_coder_group_target_and_space():
    group = [report_with_rate(2, 2, memory=9 * MB, cid="a"), report_with_rate(2, 2, memory=12 * MB, cid="b"),
             report_with_rate(1, 2, cid="c"), report_with_rate(0, 2, cid="d")]
    target, records = coder_group_rewards(group)
    assert target == 9 * MB
    assert records[0].r_space == 1.0
    assert records[1].r_space == pytest.approx(math.exp(-1 / 3))
    assert records[2].r_space == records[3].r_space == 0.0


def test_coder_group_without_full_pass():
    target, records = coder_group_rewards([report_with_rate(1, 2), report_with_rate(0, 2), report_with_rate(1, 3)])
    assert target is None
    assert all(r.r_space == 0.0 and r.r_total == r.r_acc for r in records)


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(1, 10**8)), min_size=1, max_size=6),
       st.floats(0, 5))
def test_stage_identity_holds(rows, lam):
    cfg = RewardConfig(lam=lam)
    reports = [report_with_rate(p, 4, memory=m) for p, m in rows]
    _, records = coder_group_rewards(reports, cfg)
    for rec in records:
        assert rec.r_total == rec.r_acc + lam * rec.r_space
        assert 0 <= rec.r_acc <= 1 and 0 <= rec.r_space <= 1


# -- config --------------------------------------------------------------------

def test_reward_config_roundtrip():
    cfg = RewardConfig(lam=0.25, time_mode="SigmoidCost", memory_normalizer="AbsoluteMegabytes")
    assert RewardConfig.from_dict(cfg.to_dict()) == cfg


def test_reward_config_validation():
    with pytest.raises(ConfigError):
        RewardConfig(lam=-1)
    with pytest.raises(ConfigError):
        RewardConfig.from_dict({"lamda": 1})
    with pytest.raises(ValueError):
        RewardConfig(time_mode="Fastest")
