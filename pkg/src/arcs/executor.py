"""Sandboxed candidate execution against a test suite, plus feedback encoding.

The default backend runs each test in a fresh OS process inside a throwaway
temp workspace with resource limits and a best-effort network guard. A fast
in-process backend exists for trusted fixtures where spawning a process per
test would dominate (property tests, large sweeps); it honors the same
verdict semantics but provides no isolation or caps.
"""

from __future__ import annotations

import io
import json
import logging
import os
import re
import shutil
import signal
import subprocess
import sys
import tempfile
import time
import traceback
from abc import ABC, abstractmethod
from contextlib import redirect_stdout
from dataclasses import dataclass
from pathlib import Path

from .errors import RuntimeMissingError, SandboxSetupError
from .prompting import PromptSegment

try:
    import resource
except ImportError:  # non-POSIX platform; limits become best-effort no-ops
    resource = None

log = logging.getLogger(__name__)

PASS = "pass"
WRONG_OUTPUT = "wrong_output"
EXCEPTION = "exception"
TIMEOUT = "timeout"
MEMORY_EXCEEDED = "memory_exceeded"
VERDICTS = (PASS, WRONG_OUTPUT, EXCEPTION, TIMEOUT, MEMORY_EXCEEDED)

DEFAULT_WALL_SECONDS = 10.0
DEFAULT_MEMORY_BYTES = 4 * 1024**3
DEFAULT_MAX_STACK_LINES = 10
_STDERR_KEEP_LINES = 200

_NETWORK_GUARD = """\
import socket

def _blocked(*args, **kwargs):
    raise OSError("network access is disabled in this sandbox")

socket.socket.connect = _blocked
socket.socket.connect_ex = _blocked
socket.create_connection = _blocked
socket.getaddrinfo = _blocked
"""


@dataclass(frozen=True)
class TestCase:
    id: int
    input: str
    expected: str


@dataclass(frozen=True)
class TestSuite:
    """Ordered test cases plus the output comparison mode."""

    cases: tuple[TestCase, ...]
    compare: str = "trim"

    def __post_init__(self):
        if len(self.cases) < 1:
            raise ValueError("a test suite requires at least one case")
        if self.compare not in ("trim", "exact"):
            raise ValueError(f"unknown comparison mode {self.compare!r}")
        ids = [case.id for case in self.cases]
        if len(set(ids)) != len(ids):
            raise ValueError("test ids must be unique within a suite")

    @property
    def m(self) -> int:
        return len(self.cases)

    def ordered_cases(self) -> list[TestCase]:
        return sorted(self.cases, key=lambda case: case.id)

    def to_jsonable(self) -> dict:
        return {
            "compare": self.compare,
            "cases": [
                {"id": case.id, "input": case.input, "expected": case.expected}
                for case in self.cases
            ],
        }

    @classmethod
    def from_jsonable(cls, data) -> "TestSuite":
        if isinstance(data, list):
            data = {"cases": data}
        return cls(
            cases=tuple(
                TestCase(id=int(c["id"]), input=c["input"], expected=c["expected"])
                for c in data["cases"]
            ),
            compare=data.get("compare", "trim"),
        )


def load_suite(path: str | Path) -> TestSuite:
    """Suite file: {"compare": ..., "cases": [{id, input, expected}, ...]} or a bare list."""
    return TestSuite.from_jsonable(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class ResourceCaps:
    wall_seconds: float = DEFAULT_WALL_SECONDS
    memory_bytes: int = DEFAULT_MEMORY_BYTES

    def __post_init__(self):
        if self.wall_seconds <= 0 or self.memory_bytes <= 0:
            raise ValueError("resource caps must be positive")

    def to_jsonable(self) -> dict:
        return {"wall_seconds": self.wall_seconds, "memory_bytes": self.memory_bytes}


@dataclass(frozen=True)
class RuntimeSpec:
    """Names the interpreter command used to run candidate programs."""

    language: str = "python"
    command: tuple[str, ...] = (sys.executable,)
    file_extension: str = ".py"


@dataclass(frozen=True)
class FailureDetail:
    test_id: int
    input: str
    kind: str
    summary: str
    detail_lines: tuple[str, ...] = ()

    def to_jsonable(self) -> dict:
        return {
            "test_id": self.test_id,
            "input": self.input,
            "kind": self.kind,
            "summary": self.summary,
            "detail_lines": list(self.detail_lines),
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "FailureDetail":
        return cls(
            test_id=int(data["test_id"]),
            input=data["input"],
            kind=data["kind"],
            summary=data["summary"],
            detail_lines=tuple(data["detail_lines"]),
        )


@dataclass(frozen=True)
class ExecutionFeedback:
    """Per-test verdicts in test-id order plus observed failure details."""

    test_ids: tuple[int, ...]
    verdicts: tuple[str, ...]
    pass_count: int
    failures: tuple[FailureDetail, ...]
    wall_times: tuple[float, ...]

    @property
    def all_passed(self) -> bool:
        return self.pass_count == len(self.verdicts)

    def to_jsonable(self) -> dict:
        return {
            "test_ids": list(self.test_ids),
            "verdicts": list(self.verdicts),
            "pass_count": self.pass_count,
            "failures": [f.to_jsonable() for f in self.failures],
            "wall_times": list(self.wall_times),
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "ExecutionFeedback":
        return cls(
            test_ids=tuple(int(x) for x in data["test_ids"]),
            verdicts=tuple(data["verdicts"]),
            pass_count=int(data["pass_count"]),
            failures=tuple(FailureDetail.from_jsonable(f) for f in data["failures"]),
            wall_times=tuple(float(x) for x in data["wall_times"]),
        )


def normalize_output(text: str, mode: str = "trim") -> str:
    """Trailing-whitespace-trimmed line-by-line form used for comparison."""
    if mode == "exact":
        return text
    lines = [line.rstrip() for line in text.splitlines()]
    while lines and not lines[0]:
        lines.pop(0)
    while lines and not lines[-1]:
        lines.pop()
    return "\n".join(lines)


def first_difference(expected: str, actual: str) -> str:
    exp_lines = expected.splitlines()
    act_lines = actual.splitlines()
    for number, (exp, act) in enumerate(zip(exp_lines, act_lines), start=1):
        if exp != act:
            return f"line {number}: expected {exp!r} got {act!r}"
    if len(exp_lines) != len(act_lines):
        return f"expected {len(exp_lines)} line(s), got {len(act_lines)}"
    return "outputs differ"


class Executor(ABC):
    """Boundary for running one candidate program against a suite."""

    @abstractmethod
    def execute(self, program: str, suite: TestSuite) -> ExecutionFeedback:
        """Run every test and report verdicts in test-id order."""

    @abstractmethod
    def environment_description(self) -> str:
        """Deterministic text describing runtime, entry point, and caps."""


def _assemble(results: list[tuple[int, str, FailureDetail | None, float]]) -> ExecutionFeedback:
    verdicts = tuple(verdict for _, verdict, _, _ in results)
    return ExecutionFeedback(
        test_ids=tuple(test_id for test_id, _, _, _ in results),
        verdicts=verdicts,
        pass_count=sum(1 for v in verdicts if v == PASS),
        failures=tuple(detail for _, _, detail, _ in results if detail is not None),
        wall_times=tuple(wall for _, _, _, wall in results),
    )


_TRACEBACK_KIND_RE = re.compile(r"^([A-Za-z_][\w.]*)(?::\s|:$|$)")


def _exception_kind(stderr_lines: list[str]) -> str:
    for line in reversed(stderr_lines):
        stripped = line.strip()
        if not stripped:
            continue
        match = _TRACEBACK_KIND_RE.match(stripped)
        if match and match.group(1)[:1].isupper():
            return match.group(1)
        break
    return "exception"


class ProcessExecutor(Executor):
    """Runs each test in a fresh OS process inside a temp workspace.

    Isolation is process-level: fresh working directory per test, a minimal
    environment, address-space and CPU rlimits where the OS supports them,
    and a Python-level network guard injected via sitecustomize. A container
    backend can replace this behind the same interface.
    """

    def __init__(self, runtime: RuntimeSpec | None = None, caps: ResourceCaps | None = None):
        self.runtime = runtime or RuntimeSpec()
        self.caps = caps or ResourceCaps()

    def environment_description(self) -> str:
        command_name = Path(self.runtime.command[0]).name
        return (
            f"runtime: {self.runtime.language} via {command_name}; "
            "entry: the program reads stdin and writes stdout; "
            f"caps per test: {self.caps.wall_seconds:g}s wall clock, "
            f"{self.caps.memory_bytes} bytes memory; network disabled; "
            "fresh temporary working directory per test"
        )

    def execute(self, program: str, suite: TestSuite) -> ExecutionFeedback:
        binary = self.runtime.command[0]
        if shutil.which(binary) is None and not os.path.isfile(binary):
            raise RuntimeMissingError(f"runtime binary {binary!r} not found")
        results = []
        for case in suite.ordered_cases():
            results.append(self._run_case(program, case, suite.compare))
        return _assemble(results)

    def _run_case(self, program: str, case: TestCase, compare: str):
        workdir = tempfile.mkdtemp(prefix="arcs-exec-")
        try:
            program_path = Path(workdir) / f"candidate{self.runtime.file_extension}"
            try:
                program_path.write_text(program, encoding="utf-8")
                if self.runtime.language == "python":
                    (Path(workdir) / "sitecustomize.py").write_text(
                        _NETWORK_GUARD, encoding="utf-8"
                    )
            except OSError as exc:
                raise SandboxSetupError(f"cannot prepare workspace: {exc}") from exc
            env = {
                "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
                "HOME": workdir,
                "TMPDIR": workdir,
                "LANG": "C.UTF-8",
                "LC_ALL": "C.UTF-8",
                "PYTHONDONTWRITEBYTECODE": "1",
                "PYTHONIOENCODING": "utf-8",
                "PYTHONHASHSEED": "0",
                "PYTHONPATH": workdir,
            }
            started = time.perf_counter()
            process = subprocess.Popen(
                [*self.runtime.command, str(program_path)],
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                cwd=workdir,
                env=env,
                text=True,
                encoding="utf-8",
                errors="replace",
                start_new_session=True,
                preexec_fn=self._limits() if resource is not None else None,
            )
            try:
                stdout, stderr = process.communicate(case.input, timeout=self.caps.wall_seconds)
            except subprocess.TimeoutExpired:
                self._kill_group(process)
                stdout, stderr = process.communicate()
                wall = time.perf_counter() - started
                detail = FailureDetail(
                    test_id=case.id,
                    input=case.input,
                    kind="timeout",
                    summary=f"no result within {self.caps.wall_seconds:g}s",
                )
                return case.id, TIMEOUT, detail, wall
            wall = time.perf_counter() - started
            return self._judge(case, compare, process.returncode, stdout, stderr, wall)
        finally:
            shutil.rmtree(workdir, ignore_errors=True)

    def _limits(self):
        memory = self.caps.memory_bytes
        cpu = max(1, int(self.caps.wall_seconds) + 1)

        def apply():
            try:
                resource.setrlimit(resource.RLIMIT_AS, (memory, memory))
            except (ValueError, OSError):
                pass
            try:
                resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu + 1))
            except (ValueError, OSError):
                pass

        return apply

    @staticmethod
    def _kill_group(process: subprocess.Popen) -> None:
        try:
            os.killpg(process.pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError, OSError):
            pass

    def _judge(self, case, compare, returncode, stdout, stderr, wall):
        stderr_lines = stderr.splitlines()[:_STDERR_KEEP_LINES]
        if returncode == 0:
            expected = normalize_output(case.expected, compare)
            actual = normalize_output(stdout, compare)
            if expected == actual:
                return case.id, PASS, None, wall
            detail = FailureDetail(
                test_id=case.id,
                input=case.input,
                kind="wrong output",
                summary=first_difference(expected, actual),
                detail_lines=tuple(stderr_lines),
            )
            return case.id, WRONG_OUTPUT, detail, wall
        # memory breach detection is post-hoc: the rlimit surfaces as MemoryError
        joined = "\n".join(stderr_lines)
        if "MemoryError" in joined or "Cannot allocate memory" in joined:
            detail = FailureDetail(
                test_id=case.id,
                input=case.input,
                kind="memory exceeded",
                summary=f"memory cap {self.caps.memory_bytes} bytes breached",
                detail_lines=tuple(stderr_lines),
            )
            return case.id, MEMORY_EXCEEDED, detail, wall
        kind = _exception_kind(stderr_lines)
        if kind == "exception" and returncode < 0:
            kind = f"signal {-returncode}"
        summary = stderr_lines[-1].strip() if stderr_lines else f"exit code {returncode}"
        detail = FailureDetail(
            test_id=case.id,
            input=case.input,
            kind=kind,
            summary=summary,
            detail_lines=tuple(stderr_lines),
        )
        return case.id, EXCEPTION, detail, wall


class InProcessExecutor(Executor):
    """Executes trusted candidate programs in-process via exec().

    No isolation, no caps: intended for fixture-driven property tests and
    sweeps where per-test process spawning would dominate the runtime. Each
    test still gets fresh globals and fresh stdio, and verdict semantics
    match the process backend.
    """

    def environment_description(self) -> str:
        return (
            "runtime: python (in-process); entry: the program reads stdin and "
            "writes stdout; no resource caps; trusted fixtures only"
        )

    def execute(self, program: str, suite: TestSuite) -> ExecutionFeedback:
        results = []
        for case in suite.ordered_cases():
            results.append(self._run_case(program, case, suite.compare))
        return _assemble(results)

    @staticmethod
    def _run_case(program: str, case: TestCase, compare: str):
        stdout_buffer = io.StringIO()
        original_stdin = sys.stdin
        started = time.perf_counter()
        error: BaseException | None = None
        exit_code = 0
        try:
            sys.stdin = io.StringIO(case.input)
            with redirect_stdout(stdout_buffer):
                exec(compile(program, "<candidate>", "exec"), {"__name__": "__main__"})
        except SystemExit as exc:
            if exc.code not in (None, 0):
                error = exc
                exit_code = exc.code if isinstance(exc.code, int) else 1
        except BaseException as exc:
            error = exc
            exit_code = 1
        finally:
            sys.stdin = original_stdin
        wall = time.perf_counter() - started
        if error is not None:
            stack = traceback.format_exception(type(error), error, error.__traceback__)
            stack_lines = tuple(
                line.rstrip() for chunk in stack for line in chunk.splitlines()
            )[:_STDERR_KEEP_LINES]
            detail = FailureDetail(
                test_id=case.id,
                input=case.input,
                kind=type(error).__name__,
                summary=str(error) or f"exit code {exit_code}",
                detail_lines=stack_lines,
            )
            return case.id, EXCEPTION, detail, wall
        expected = normalize_output(case.expected, compare)
        actual = normalize_output(stdout_buffer.getvalue(), compare)
        if expected == actual:
            return case.id, PASS, None, wall
        detail = FailureDetail(
            test_id=case.id,
            input=case.input,
            kind="wrong output",
            summary=first_difference(expected, actual),
        )
        return case.id, WRONG_OUTPUT, detail, wall


def encode_feedback(
    feedback: ExecutionFeedback, max_stack_lines: int = DEFAULT_MAX_STACK_LINES
) -> PromptSegment:
    """Serialize observed failures only into a feedback prompt segment.

    The verdict vector comes first; each failing test then contributes its
    kind, its input, a first-difference or error summary, and at most
    ``max_stack_lines`` stack/stderr lines (head of stack). Passing tests
    appear only in the vector. No speculative repair hints.
    """
    total = len(feedback.verdicts)
    vector = " ".join(
        f"{test_id}:{verdict}" for test_id, verdict in zip(feedback.test_ids, feedback.verdicts)
    )
    lines = [f"tests: {vector} ({feedback.pass_count}/{total} passed)"]
    for detail in feedback.failures:
        lines.append(f"[test {detail.test_id}] {detail.kind}")
        lines.append(f"input: {json.dumps(detail.input)}")
        lines.append(f"summary: {detail.summary}")
        if detail.detail_lines:
            lines.append("stack:")
            lines.extend(f"  {line}" for line in detail.detail_lines[:max_stack_lines])
    return PromptSegment(kind="fb", text="\n".join(lines))
