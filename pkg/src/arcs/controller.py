"""The budgeted synthesize-execute-repair loop.

Each round optionally plans, refreshes evidence from the repaired prompt,
composes and truncates the enriched prompt, proposes a candidate from the
frozen model, executes it against the suite, and either halts on all-pass or
appends the encoded feedback. At budget exhaustion the best-so-far candidate
(most tests passed, earliest round on ties) is returned. Every round is
logged completely so scripted runs replay bit-exactly.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from . import planner as planner_mod
from . import prompting, retrieval
from .corpus import CorpusSnapshot
from .embedding import EmbeddingProvider
from .errors import (
    ConfigError,
    EmbedderMismatchError,
    ModelProposalError,
    NoCandidateError,
    ReplayAssetError,
)
from .executor import ExecutionFeedback, Executor, TestSuite, encode_feedback
from .model import DecodingParams, ProposalModel, Usage, extract_code
from .planner import Plan
from .util import json_digest, text_digest, utc_now_iso

log = logging.getLogger(__name__)

RUN_LOG_VERSION = 1
MANIFEST_NAME = "manifest.json"

DEFAULT_K = 10
DEFAULT_ITERATIONS = 5
DEFAULT_MAX_SUBGOALS = 4


@dataclass(frozen=True)
class TierConfig:
    """Projection of the full controller onto (k, iteration budget, planning).

    The tier name is derived from the parameters: (k=0, 1 round, planning
    off) is small, (k=0, 1 round, planning on) is medium, (k>0, >1 rounds,
    planning on) is large, anything else is custom. Deriving the name keeps
    a large-tier controller projected to small-tier parameters identical to
    the small tier, log for log.
    """

    k: int
    iterations: int
    max_subgoals: int = DEFAULT_MAX_SUBGOALS
    planning: bool = False

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("retrieval budget k must be >= 0")
        if self.iterations < 1:
            raise ValueError("iteration budget must be >= 1")
        if self.max_subgoals < 0:
            raise ValueError("max subgoals must be >= 0")

    @property
    def name(self) -> str:
        if self.k == 0 and self.iterations == 1:
            return "medium" if self.planning else "small"
        if self.k > 0 and self.iterations > 1 and self.planning:
            return "large"
        return "custom"

    @classmethod
    def small(cls) -> "TierConfig":
        return cls(k=0, iterations=1, planning=False)

    @classmethod
    def medium(cls) -> "TierConfig":
        return cls(k=0, iterations=1, planning=True)

    @classmethod
    def large(
        cls,
        k: int = DEFAULT_K,
        iterations: int = DEFAULT_ITERATIONS,
        max_subgoals: int = DEFAULT_MAX_SUBGOALS,
    ) -> "TierConfig":
        if k <= 0 or iterations <= 1:
            raise ValueError("large tier requires k > 0 and more than one round")
        return cls(k=k, iterations=iterations, max_subgoals=max_subgoals, planning=True)

    def to_jsonable(self) -> dict:
        return {
            "k": self.k,
            "iterations": self.iterations,
            "max_subgoals": self.max_subgoals,
            "planning": self.planning,
            "name": self.name,
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "TierConfig":
        return cls(
            k=int(data["k"]),
            iterations=int(data["iterations"]),
            max_subgoals=int(data["max_subgoals"]),
            planning=bool(data["planning"]),
        )


@dataclass(frozen=True)
class AffineCost:
    """Cost function constant + per_unit * quantity."""

    constant: float = 1.0
    per_unit: float = 0.0

    def __call__(self, quantity: float) -> float:
        return self.constant + self.per_unit * quantity

    def to_jsonable(self) -> dict:
        return {"constant": self.constant, "per_unit": self.per_unit}

    @classmethod
    def from_jsonable(cls, data: dict) -> "AffineCost":
        return cls(constant=float(data["constant"]), per_unit=float(data["per_unit"]))


@dataclass(frozen=True)
class CostModel:
    """Unit costs for retrieval, prompt tokens, and per-test execution."""

    retrieval: AffineCost = AffineCost()
    prompt_input: AffineCost = AffineCost()
    prompt_output: AffineCost = AffineCost()
    exec_per_test: float = 1.0

    def to_jsonable(self) -> dict:
        return {
            "retrieval": self.retrieval.to_jsonable(),
            "prompt_input": self.prompt_input.to_jsonable(),
            "prompt_output": self.prompt_output.to_jsonable(),
            "exec_per_test": self.exec_per_test,
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "CostModel":
        return cls(
            retrieval=AffineCost.from_jsonable(data["retrieval"]),
            prompt_input=AffineCost.from_jsonable(data["prompt_input"]),
            prompt_output=AffineCost.from_jsonable(data["prompt_output"]),
            exec_per_test=float(data["exec_per_test"]),
        )


@dataclass(frozen=True)
class RoundCost:
    retrieval: float
    prompt_input: float
    prompt_output: float
    execution: float

    @property
    def total(self) -> float:
        return self.retrieval + self.prompt_input + self.prompt_output + self.execution

    def to_jsonable(self) -> dict:
        return {
            "retrieval": self.retrieval,
            "prompt_input": self.prompt_input,
            "prompt_output": self.prompt_output,
            "execution": self.execution,
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "RoundCost":
        return cls(
            retrieval=float(data["retrieval"]),
            prompt_input=float(data["prompt_input"]),
            prompt_output=float(data["prompt_output"]),
            execution=float(data["execution"]),
        )


@dataclass
class CostReport:
    model: CostModel
    rounds: list[RoundCost] = field(default_factory=list)

    @property
    def total(self) -> float:
        return sum(round_cost.total for round_cost in self.rounds)

    def to_jsonable(self) -> dict:
        return {
            "model": self.model.to_jsonable(),
            "rounds": [round_cost.to_jsonable() for round_cost in self.rounds],
            "total": self.total,
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "CostReport":
        return cls(
            model=CostModel.from_jsonable(data["model"]),
            rounds=[RoundCost.from_jsonable(r) for r in data["rounds"]],
        )


@dataclass(frozen=True)
class CostBound:
    bound: float
    within_bound: bool


def check_cost_bound(report: CostReport, caps: Mapping[str, float]) -> CostBound:
    """Per-round worst case times the iteration budget vs. accumulated actuals.

    ``caps`` carries B (iterations), k (retrieval budget), L_max (token
    cap), and m (suite size).
    """
    model = report.model
    per_round = (
        model.retrieval(caps["k"])
        + model.prompt_input(caps["L_max"])
        + model.prompt_output(caps["L_max"])
        + caps["m"] * model.exec_per_test
    )
    bound = caps["B"] * per_round
    return CostBound(bound=bound, within_bound=report.total <= bound + 1e-9)


def update_best(
    best: tuple[str, int] | None, candidate: str | None, count: int
) -> tuple[str, int] | None:
    """Adopt the candidate only on a strictly greater pass count.

    Keeping the incumbent on ties realizes the earliest-round tie-break of
    the final argmax.
    """
    if candidate is None:
        return best
    if best is None or count > best[1]:
        return (candidate, count)
    return best


@dataclass
class RunDeps:
    """Everything a run needs besides the task: adapters, caps, unit costs."""

    model: ProposalModel
    executor: Executor
    snapshot: CorpusSnapshot | None = None
    embedder: EmbeddingProvider | None = None
    decoding: DecodingParams = field(default_factory=DecodingParams)
    cost_model: CostModel = field(default_factory=CostModel)
    input_token_cap: int = prompting.DEFAULT_INPUT_TOKEN_CAP
    redundancy_delta: float = retrieval.DEFAULT_DELTA
    plan_gate_tokens: int = planner_mod.DEFAULT_GATE_TOKENS
    max_stack_lines: int = 10
    denylist: frozenset[str] | None = None
    config_echo: dict = field(default_factory=dict)


@dataclass
class RoundLog:
    """Complete record of one round, sufficient for bit-exact replay."""

    t: int
    prompt_state: str
    plan: Plan | None
    retrieval: dict | None
    composed_text: str
    composed_digest: str
    candidate_raw: str | None
    program: str | None
    feedback: ExecutionFeedback | None
    usage: Usage | None
    wall_seconds: float

    def to_jsonable(self, include_timing: bool = True) -> dict:
        feedback = None
        if self.feedback is not None:
            feedback = self.feedback.to_jsonable()
            if not include_timing:
                feedback.pop("wall_times", None)
        record = {
            "t": self.t,
            "prompt_state": self.prompt_state,
            "plan": self.plan.to_jsonable() if self.plan is not None else None,
            "retrieval": self.retrieval,
            "composed_text": self.composed_text,
            "composed_digest": self.composed_digest,
            "candidate_raw": self.candidate_raw,
            "program": self.program,
            "feedback": feedback,
            "usage": self.usage.to_jsonable() if self.usage is not None else None,
        }
        if include_timing:
            record["wall_seconds"] = self.wall_seconds
        return record

    @classmethod
    def from_jsonable(cls, data: dict) -> "RoundLog":
        return cls(
            t=int(data["t"]),
            prompt_state=data["prompt_state"],
            plan=Plan.from_jsonable(data["plan"]) if data["plan"] is not None else None,
            retrieval=data["retrieval"],
            composed_text=data["composed_text"],
            composed_digest=data["composed_digest"],
            candidate_raw=data["candidate_raw"],
            program=data["program"],
            feedback=(
                ExecutionFeedback.from_jsonable(data["feedback"])
                if data["feedback"] is not None
                else None
            ),
            usage=(
                Usage(
                    input_tokens=int(data["usage"]["input_tokens"]),
                    output_tokens=int(data["usage"]["output_tokens"]),
                )
                if data["usage"] is not None
                else None
            ),
            wall_seconds=float(data.get("wall_seconds", 0.0)),
        )


@dataclass
class RunLog:
    """Per-run record: configuration, assets, rounds, outcome, costs."""

    spec: str
    suite: TestSuite
    tier: TierConfig
    decoding: DecodingParams
    input_token_cap: int
    redundancy_delta: float
    plan_gate_tokens: int
    max_stack_lines: int
    snapshot_digest: str | None
    embedder_id: str | None
    model_id: str
    model_asset_digest: str | None
    template_fingerprints: dict
    environment_text: str
    invariants_text: str
    config: dict
    cost: CostReport
    rounds: list[RoundLog]
    outcome: dict
    created_at: str = field(default_factory=utc_now_iso)
    version: int = RUN_LOG_VERSION

    @property
    def seed(self) -> int:
        return self.decoding.seed

    def to_jsonable(self, include_timing: bool = True) -> dict:
        record = {
            "version": self.version,
            "spec": self.spec,
            "suite": self.suite.to_jsonable(),
            "tier": self.tier.to_jsonable(),
            "decoding": self.decoding.to_jsonable(),
            "input_token_cap": self.input_token_cap,
            "redundancy_delta": self.redundancy_delta,
            "plan_gate_tokens": self.plan_gate_tokens,
            "max_stack_lines": self.max_stack_lines,
            "snapshot_digest": self.snapshot_digest,
            "embedder_id": self.embedder_id,
            "model_id": self.model_id,
            "model_asset_digest": self.model_asset_digest,
            "template_fingerprints": self.template_fingerprints,
            "environment_text": self.environment_text,
            "invariants_text": self.invariants_text,
            "config": self.config,
            "cost": self.cost.to_jsonable(),
            "rounds": [r.to_jsonable(include_timing) for r in self.rounds],
            "outcome": self.outcome,
        }
        if include_timing:
            record["created_at"] = self.created_at
        return record

    @classmethod
    def from_jsonable(cls, data: dict) -> "RunLog":
        return cls(
            spec=data["spec"],
            suite=TestSuite.from_jsonable(data["suite"]),
            tier=TierConfig.from_jsonable(data["tier"]),
            decoding=DecodingParams.from_jsonable(data["decoding"]),
            input_token_cap=int(data["input_token_cap"]),
            redundancy_delta=float(data["redundancy_delta"]),
            plan_gate_tokens=int(data["plan_gate_tokens"]),
            max_stack_lines=int(data["max_stack_lines"]),
            snapshot_digest=data["snapshot_digest"],
            embedder_id=data["embedder_id"],
            model_id=data["model_id"],
            model_asset_digest=data["model_asset_digest"],
            template_fingerprints=data["template_fingerprints"],
            environment_text=data["environment_text"],
            invariants_text=data["invariants_text"],
            config=data["config"],
            cost=CostReport.from_jsonable(data["cost"]),
            rounds=[RoundLog.from_jsonable(r) for r in data["rounds"]],
            outcome=data["outcome"],
            created_at=data.get("created_at", ""),
            version=int(data["version"]),
        )


@dataclass(frozen=True)
class RunResult:
    program: str
    log: RunLog


def best_so_far_trajectory(run_log: RunLog) -> list[int]:
    """Running maximum of pass counts over the logged rounds."""
    best = 0
    trajectory = []
    for round_log in run_log.rounds:
        if round_log.feedback is not None:
            best = max(best, round_log.feedback.pass_count)
        trajectory.append(best)
    return trajectory


def current_template_fingerprints() -> dict:
    return {
        "prompting": prompting.template_fingerprint(),
        "planning": planner_mod.template_fingerprint(),
    }


def _invariants_text(suite: TestSuite) -> str:
    return (
        "The program reads from standard input and writes to standard output. "
        f"It must satisfy all {suite.m} input/output tests "
        f"(output comparison mode: {suite.compare})."
    )


def run(spec: str, suite: TestSuite, tier: TierConfig, deps: RunDeps) -> RunResult:
    """Execute at most ``tier.iterations`` synthesize-execute-repair rounds.

    Halts early when a candidate passes every test; otherwise returns the
    candidate with the most tests passed (earliest round on ties). A hard
    model failure consumes its round with an empty candidate; if every round
    is empty the run raises NoCandidateError carrying the log.
    """
    if tier.k > 0:
        if deps.snapshot is None:
            raise ConfigError("retrieval is enabled (k>0) but no corpus snapshot was provided")
        if deps.embedder is None:
            raise ConfigError("retrieval is enabled (k>0) but no embedder was provided")
        if deps.embedder.embedder_id != deps.snapshot.embedder_id:
            raise EmbedderMismatchError(
                f"snapshot embedder {deps.snapshot.embedder_id!r} does not match "
                f"provided embedder {deps.embedder.embedder_id!r}"
            )
    deps.model.reset()
    environment_text = deps.executor.environment_description()
    invariants_text = _invariants_text(suite)

    q_t = spec
    feedback_segments: list = []
    prior: tuple[Plan, ExecutionFeedback] | None = None
    best: tuple[str, int] | None = None
    best_round: int | None = None
    rounds: list[RoundLog] = []
    cost_report = CostReport(model=deps.cost_model)
    returned_program: str | None = None
    returned_round: int | None = None
    passed = False

    for t in range(tier.iterations):
        round_start = time.perf_counter()
        plan_t: Plan | None = None
        if tier.planning:
            plan_t = planner_mod.plan(
                q_t,
                deps.model,
                prior,
                max_subgoals=tier.max_subgoals,
                gate_tokens=deps.plan_gate_tokens,
                params=deps.decoding,
            )
        evidence = None
        if tier.k > 0:
            evidence = retrieval.refresh(
                q_t,
                plan_t,
                tier.k,
                deps.snapshot,
                deps.embedder,
                deps.redundancy_delta,
                deps.denylist,
            )
        composed = prompting.compose(
            task=spec,
            plan=plan_t,
            evidence=evidence,
            feedback_history=feedback_segments,
            invariants=invariants_text,
            environment=environment_text,
        )
        composed = prompting.truncate(composed, deps.input_token_cap)

        candidate_raw: str | None = None
        usage: Usage | None = None
        program: str | None = None
        feedback: ExecutionFeedback | None = None
        try:
            candidate_raw, usage = deps.model.propose(composed, deps.decoding)
        except ModelProposalError as exc:
            log.warning("round %d: model hard failure (%s); recording an empty round", t, exc)
        if candidate_raw is not None:
            program = extract_code(candidate_raw)
            feedback = deps.executor.execute(program, suite)

        cost_report.rounds.append(
            RoundCost(
                retrieval=deps.cost_model.retrieval(tier.k) if evidence is not None else 0.0,
                prompt_input=(
                    deps.cost_model.prompt_input(usage.input_tokens) if usage is not None else 0.0
                ),
                prompt_output=(
                    deps.cost_model.prompt_output(usage.output_tokens) if usage is not None else 0.0
                ),
                execution=suite.m * deps.cost_model.exec_per_test if feedback is not None else 0.0,
            )
        )
        rounds.append(
            RoundLog(
                t=t,
                prompt_state=q_t,
                plan=plan_t,
                retrieval=evidence.to_jsonable() if evidence is not None else None,
                composed_text=composed.text,
                composed_digest=composed.digest,
                candidate_raw=candidate_raw,
                program=program,
                feedback=feedback,
                usage=usage,
                wall_seconds=time.perf_counter() - round_start,
            )
        )
        if feedback is None:
            continue
        adopted = update_best(best, program, feedback.pass_count)
        if adopted is not best:
            best_round = t
        best = adopted
        if feedback.all_passed:
            passed = True
            returned_program = program
            returned_round = t
            break
        segment = encode_feedback(feedback, deps.max_stack_lines)
        feedback_segments.append(segment)
        q_t = q_t + "\n\n" + segment.text
        prior = (plan_t, feedback) if plan_t is not None else None

    if returned_program is None and best is not None:
        returned_program, _ = best
        returned_round = best_round

    outcome = {
        "passed": passed,
        "returned_round": returned_round,
        "returned_program": returned_program,
        "best_pass_count": best[1] if best is not None else 0,
        "rounds_executed": len(rounds),
        "suite_size": suite.m,
    }
    run_log = RunLog(
        spec=spec,
        suite=suite,
        tier=tier,
        decoding=deps.decoding,
        input_token_cap=deps.input_token_cap,
        redundancy_delta=deps.redundancy_delta,
        plan_gate_tokens=deps.plan_gate_tokens,
        max_stack_lines=deps.max_stack_lines,
        snapshot_digest=deps.snapshot.content_digest if tier.k > 0 else None,
        embedder_id=deps.embedder.embedder_id if tier.k > 0 else None,
        model_id=deps.model.model_id,
        model_asset_digest=getattr(deps.model, "script_digest", None),
        template_fingerprints=current_template_fingerprints(),
        environment_text=environment_text,
        invariants_text=invariants_text,
        config=dict(deps.config_echo),
        cost=cost_report,
        rounds=rounds,
        outcome=outcome,
    )
    if returned_program is None:
        raise NoCandidateError(
            "no candidate: every round ended with an empty proposal", run_log
        )
    return RunResult(program=returned_program, log=run_log)


def save_run_log(run_log: RunLog, directory: str | Path) -> Path:
    """Persist a run log as a manifest plus one file per round."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    round_entries = []
    for round_log in run_log.rounds:
        name = f"round_{round_log.t:03d}.json"
        text = json.dumps(round_log.to_jsonable(include_timing=True), indent=2, sort_keys=True)
        (directory / name).write_text(text, encoding="utf-8")
        round_entries.append({"file": name, "digest": text_digest(text)})
    manifest = run_log.to_jsonable(include_timing=True)
    manifest["rounds"] = round_entries
    manifest["config_digest"] = json_digest(run_log.config)
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
    )
    return directory


def load_run_log(directory: str | Path) -> RunLog:
    """Load a persisted run log, verifying per-round digests."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ReplayAssetError(f"run log manifest {manifest_path} is unreadable: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ReplayAssetError(f"run log manifest {manifest_path} is corrupt") from exc
    rounds = []
    for entry in manifest.get("rounds", []):
        round_path = directory / entry["file"]
        try:
            text = round_path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ReplayAssetError(f"round file {entry['file']} is missing") from exc
        if text_digest(text) != entry["digest"]:
            raise ReplayAssetError(f"round file {entry['file']} failed its digest check")
        rounds.append(text)
    data = dict(manifest)
    data["rounds"] = [json.loads(text) for text in rounds]
    return RunLog.from_jsonable(data)


def replay(run_log: RunLog, deps: RunDeps) -> RunLog:
    """Re-execute a logged run from its frozen assets and configuration.

    Raises ReplayAssetError naming the divergent asset when a required
    digest or identifier does not match. Returns the fresh log; compare with
    ``compare_run_logs`` (wall times excluded).
    """
    if deps.model.model_id != run_log.model_id:
        raise ReplayAssetError(
            f"model id {deps.model.model_id!r} differs from logged {run_log.model_id!r}"
        )
    if run_log.model_asset_digest is not None:
        current = getattr(deps.model, "script_digest", None)
        if current != run_log.model_asset_digest:
            raise ReplayAssetError("model script digest differs from the logged asset")
    if run_log.snapshot_digest is not None:
        if deps.snapshot is None:
            raise ReplayAssetError(
                f"snapshot with digest {run_log.snapshot_digest} is required but missing"
            )
        if deps.snapshot.content_digest != run_log.snapshot_digest:
            raise ReplayAssetError(
                f"snapshot digest {deps.snapshot.content_digest} differs from logged "
                f"{run_log.snapshot_digest}"
            )
        if deps.embedder is None or deps.embedder.embedder_id != run_log.embedder_id:
            raise ReplayAssetError(f"embedder {run_log.embedder_id!r} is required for replay")
    if current_template_fingerprints() != run_log.template_fingerprints:
        raise ReplayAssetError("prompt template fingerprints differ from the logged versions")
    replay_deps = dataclasses.replace(
        deps,
        decoding=run_log.decoding,
        cost_model=run_log.cost.model,
        input_token_cap=run_log.input_token_cap,
        redundancy_delta=run_log.redundancy_delta,
        plan_gate_tokens=run_log.plan_gate_tokens,
        max_stack_lines=run_log.max_stack_lines,
        config_echo=dict(run_log.config),
    )
    result = run(run_log.spec, run_log.suite, run_log.tier, replay_deps)
    return result.log


def compare_run_logs(first: RunLog, second: RunLog) -> list[str]:
    """Paths of fields that differ, ignoring wall times and timestamps."""
    differences: list[str] = []
    _diff(
        first.to_jsonable(include_timing=False),
        second.to_jsonable(include_timing=False),
        "",
        differences,
    )
    return differences


def _diff(left, right, path, out):
    if isinstance(left, dict) and isinstance(right, dict):
        for key in sorted(set(left) | set(right)):
            if key not in left or key not in right:
                out.append(f"{path}/{key}")
            else:
                _diff(left[key], right[key], f"{path}/{key}", out)
        return
    if isinstance(left, list) and isinstance(right, list):
        if len(left) != len(right):
            out.append(f"{path}/length")
            return
        for position, (a, b) in enumerate(zip(left, right)):
            _diff(a, b, f"{path}[{position}]", out)
        return
    if left != right:
        out.append(path or "/")
