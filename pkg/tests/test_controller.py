from __future__ import annotations

import dataclasses

import pytest

from arcs.controller import (
    AffineCost,
    CostModel,
    CostReport,
    RoundCost,
    RunDeps,
    TierConfig,
    best_so_far_trajectory,
    check_cost_bound,
    compare_run_logs,
    load_run_log,
    replay,
    run,
    save_run_log,
    update_best,
)
from arcs.errors import ConfigError, NoCandidateError, ReplayAssetError
from arcs.executor import InProcessExecutor, ProcessExecutor
from arcs.model import ScriptedModel

from helpers import (
    BUGGY_SUM,
    FIXED_SUM,
    buggy_then_fixed_model,
    constant_model,
    fenced,
    long_spec,
    sum_suite,
)

SPEC = "Read two integers from one stdin line and print their sum."


def _deps(model, **overrides):
    return RunDeps(model=model, executor=InProcessExecutor(), **overrides)


def test_tier_projections_and_names():
    assert TierConfig.small().name == "small"
    assert TierConfig.medium().name == "medium"
    assert TierConfig.large().name == "large"
    assert TierConfig.large() == TierConfig(k=10, iterations=5, max_subgoals=4, planning=True)
    projected = TierConfig(k=0, iterations=1, planning=False)
    assert projected == TierConfig.small()
    with pytest.raises(ValueError):
        TierConfig.large(k=0)
    with pytest.raises(ValueError):
        TierConfig(k=-1, iterations=1)


def test_repair_loop_passes_at_round_one():
    model = buggy_then_fixed_model()
    result = run(SPEC, sum_suite(), TierConfig(k=0, iterations=5, planning=False), _deps(model))
    assert result.log.outcome["passed"] is True
    assert result.log.outcome["returned_round"] == 1
    assert result.log.outcome["rounds_executed"] == 2
    assert result.program.strip() == FIXED_SUM
    assert result.log.rounds[0].feedback.pass_count == 0
    assert result.log.rounds[1].feedback.pass_count == 3


def test_feedback_disabled_never_passes():
    model = buggy_then_fixed_model()
    result = run(SPEC, sum_suite(), TierConfig.small(), _deps(model))
    assert result.log.outcome["passed"] is False
    assert result.log.outcome["rounds_executed"] == 1
    assert result.program.strip() == BUGGY_SUM


def test_all_pass_at_round_zero_halts_immediately():
    model = constant_model(FIXED_SUM)
    result = run(SPEC, sum_suite(), TierConfig(k=0, iterations=5, planning=False), _deps(model))
    assert result.log.outcome["rounds_executed"] == 1
    assert result.log.outcome["returned_round"] == 0
    assert result.log.outcome["passed"] is True


def test_budget_exhaustion_returns_argmax_with_earliest_tie_break():
    # pass counts per round: 1, 0, 2 -> round 2 candidate returned
    programs = [
        "print('3')",        # passes only test 1 of the sum suite
        "print('nothing')",  # passes none
        "a, b = map(int, input().split())\nprint(a + b if a != 1 else 0)",  # passes 2
    ]
    model = ScriptedModel(
        [{"ordinal": i, "response": fenced(code)} for i, code in enumerate(programs)]
    )
    result = run(SPEC, sum_suite(), TierConfig(k=0, iterations=3, planning=False), _deps(model))
    assert result.log.outcome["passed"] is False
    assert result.log.outcome["returned_round"] == 2
    assert result.log.outcome["best_pass_count"] == 2
    assert result.program.strip().endswith("else 0)")


def test_model_hard_failure_consumes_round():
    entries = [{"ordinal": 1, "response": fenced(FIXED_SUM)}]  # ordinal 0 has no match
    model = ScriptedModel(entries)
    result = run(SPEC, sum_suite(), TierConfig(k=0, iterations=2, planning=False), _deps(model))
    assert result.log.rounds[0].candidate_raw is None
    assert result.log.rounds[0].feedback is None
    assert result.log.outcome["passed"] is True
    assert result.log.outcome["returned_round"] == 1


def test_all_rounds_empty_raises_no_candidate_with_log():
    model = ScriptedModel([])
    with pytest.raises(NoCandidateError) as excinfo:
        run(SPEC, sum_suite(), TierConfig(k=0, iterations=3, planning=False), _deps(model))
    assert excinfo.value.run_log is not None
    assert excinfo.value.run_log.outcome["rounds_executed"] == 3


def test_empty_response_is_a_failing_candidate():
    model = ScriptedModel([{"response": ""}])
    result = run(SPEC, sum_suite(), TierConfig.small(), _deps(model))
    assert result.log.rounds[0].program == ""
    assert result.log.rounds[0].feedback.pass_count == 0
    assert result.log.outcome["passed"] is False


def test_update_best_rules():
    assert update_best(None, "c1", 1) == ("c1", 1)
    assert update_best(("inc", 2), "new", 2) == ("inc", 2)
    assert update_best(("inc", 2), "new", 3) == ("new", 3)
    assert update_best(("inc", 2), None, 9) == ("inc", 2)
    # running max over counts [1, 3, 2]
    best = None
    trajectory = []
    for i, count in enumerate([1, 3, 2]):
        best = update_best(best, f"c{i}", count)
        trajectory.append(best[1])
    assert trajectory == [1, 3, 3]


def test_best_so_far_trajectory_is_non_decreasing():
    programs = ["print('3')", "print('x')", "print('3')"]
    model = ScriptedModel(
        [{"ordinal": i, "response": fenced(code)} for i, code in enumerate(programs)]
    )
    result = run(SPEC, sum_suite(), TierConfig(k=0, iterations=3, planning=False), _deps(model))
    trajectory = best_so_far_trajectory(result.log)
    assert trajectory == [1, 1, 1]
    assert all(a <= b for a, b in zip(trajectory, trajectory[1:]))


def test_cost_bound_reference_value():
    report = CostReport(model=CostModel())
    bound = check_cost_bound(report, {"B": 5, "k": 10, "L_max": 512, "m": 3})
    assert bound.bound == 30.0
    assert bound.within_bound  # zero rounds executed


def test_cost_bound_holds_for_a_real_run():
    model = buggy_then_fixed_model()
    suite = sum_suite()
    tier = TierConfig(k=0, iterations=5, planning=False)
    result = run(SPEC, suite, tier, _deps(model))
    report = result.log.cost
    caps = {"B": tier.iterations, "k": tier.k, "L_max": 512, "m": suite.m}
    assert check_cost_bound(report, caps).within_bound
    # two rounds, unit costs, no retrieval at k=0: each round 1+1+m
    assert report.total == pytest.approx(2 * (2 + suite.m))


def test_affine_cost_model():
    model = CostModel(
        retrieval=AffineCost(constant=2.0, per_unit=0.1),
        prompt_input=AffineCost(constant=0.0, per_unit=0.01),
        prompt_output=AffineCost(constant=0.0, per_unit=0.02),
        exec_per_test=0.5,
    )
    report = CostReport(model=model, rounds=[RoundCost(3.0, 5.12, 10.24, 1.5)])
    bound = check_cost_bound(report, {"B": 1, "k": 10, "L_max": 512, "m": 3})
    assert bound.bound == pytest.approx(3.0 + 5.12 + 10.24 + 1.5)
    assert bound.within_bound


def test_retrieval_requires_snapshot():
    model = constant_model(FIXED_SUM)
    with pytest.raises(ConfigError):
        run(SPEC, sum_suite(), TierConfig.large(), _deps(model))


def test_run_log_round_trip(tmp_path):
    model = buggy_then_fixed_model()
    result = run(SPEC, sum_suite(), TierConfig(k=0, iterations=5, planning=False), _deps(model))
    directory = save_run_log(result.log, tmp_path / "log")
    loaded = load_run_log(directory)
    assert compare_run_logs(result.log, loaded) == []
    assert loaded.outcome == result.log.outcome


def test_tampered_round_file_is_detected(tmp_path):
    model = buggy_then_fixed_model()
    result = run(SPEC, sum_suite(), TierConfig(k=0, iterations=5, planning=False), _deps(model))
    directory = save_run_log(result.log, tmp_path / "log")
    target = directory / "round_000.json"
    text = target.read_text(encoding="utf-8")
    target.write_text(text.replace("wrong_output", "wrong_OUTPUT", 1), encoding="utf-8")
    with pytest.raises(ReplayAssetError) as excinfo:
        load_run_log(directory)
    assert "round_000.json" in str(excinfo.value)


def test_replay_reproduces_the_run(tmp_path):
    model = buggy_then_fixed_model()
    deps = _deps(model)
    result = run(SPEC, sum_suite(), TierConfig(k=0, iterations=5, planning=False), deps)
    directory = save_run_log(result.log, tmp_path / "log")
    loaded = load_run_log(directory)
    fresh = replay(loaded, deps)
    assert compare_run_logs(loaded, fresh) == []


def test_replay_rejects_wrong_script():
    model = buggy_then_fixed_model()
    result = run(SPEC, sum_suite(), TierConfig(k=0, iterations=5, planning=False), _deps(model))
    other = constant_model("print('different script')")
    other.model_id = "scripted"
    with pytest.raises(ReplayAssetError):
        replay(result.log, _deps(other))


def test_replay_rejects_missing_snapshot(snapshot, embedder):
    model = buggy_then_fixed_model()
    deps = RunDeps(
        model=model,
        executor=InProcessExecutor(),
        snapshot=snapshot,
        embedder=embedder,
    )
    tier = TierConfig.large(k=2, iterations=2)
    result = run(long_spec(SPEC), sum_suite(), tier, deps)
    assert result.log.snapshot_digest == snapshot.content_digest
    stripped = dataclasses.replace(deps, snapshot=None)
    with pytest.raises(ReplayAssetError) as excinfo:
        replay(result.log, stripped)
    assert "snapshot" in str(excinfo.value)


def test_small_runs_do_not_record_snapshot(snapshot, embedder):
    model = buggy_then_fixed_model()
    deps = RunDeps(
        model=model,
        executor=InProcessExecutor(),
        snapshot=snapshot,
        embedder=embedder,
    )
    result = run(SPEC, sum_suite(), TierConfig.small(), deps)
    assert result.log.snapshot_digest is None
    assert result.log.embedder_id is None


def test_large_projected_to_small_produces_identical_log(snapshot, embedder):
    suite = sum_suite()
    small_result = run(
        SPEC,
        suite,
        TierConfig.small(),
        RunDeps(model=buggy_then_fixed_model(), executor=InProcessExecutor()),
    )
    projected = TierConfig(k=0, iterations=1, max_subgoals=4, planning=False)
    projected_result = run(
        SPEC,
        suite,
        projected,
        RunDeps(
            model=buggy_then_fixed_model(),
            executor=InProcessExecutor(),
            snapshot=snapshot,
            embedder=embedder,
        ),
    )
    assert compare_run_logs(small_result.log, projected_result.log) == []


def test_medium_tier_plans_without_evidence():
    model = buggy_then_fixed_model()
    spec = long_spec(SPEC)
    result = run(spec, sum_suite(), TierConfig.medium(), _deps(model))
    round_log = result.log.rounds[0]
    assert round_log.plan is not None
    assert round_log.retrieval is None
    assert "[[PLAN]]" in round_log.composed_text
    assert "[[EVIDENCE" not in round_log.composed_text


def test_planning_gate_disables_plan_for_short_specs():
    model = buggy_then_fixed_model()
    result = run(SPEC, sum_suite(), TierConfig.medium(), _deps(model))
    assert result.log.rounds[0].plan is None


def test_large_tier_full_loop(snapshot, embedder):
    deps = RunDeps(
        model=buggy_then_fixed_model(),
        executor=InProcessExecutor(),
        snapshot=snapshot,
        embedder=embedder,
    )
    result = run(long_spec(SPEC), sum_suite(), TierConfig.large(k=3, iterations=4), deps)
    assert result.log.outcome["passed"] is True
    first = result.log.rounds[0]
    assert first.plan is not None
    assert first.retrieval is not None
    assert first.retrieval["snapshot_digest"] == snapshot.content_digest
    assert len(first.retrieval["indices"]) <= 3
    assert "[[EVIDENCE 1]]" in first.composed_text
