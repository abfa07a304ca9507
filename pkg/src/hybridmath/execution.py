"""Program extraction and sandboxed execution.

A program extracted from a completion is run by a *runner*: anything that
accepts one JSON request and yields one JSON reply. The production runner is
a separate child-process shim spoken to over stdin/stdout; tests inject an
in-process runner or a fully scripted one. The executor owns the supervision
policy either way: timeouts kill the whole child process group, output is
capped, and a runner that breaks protocol is reported as infrastructure
failure rather than a model failure.

Wire format (one request per child invocation):
    stdin:  {"code": str, "timeout_s": float, "policy": {...}}
    stdout: {"status": "ok"|"exception"|"timeout", "stdout": str,
             "stderr": str, "duration_ms": int}
"""

from __future__ import annotations

import io
import json
import os
import re
import signal
import subprocess
import threading
import time
import traceback
from contextlib import redirect_stdout
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

DEFAULT_TIMEOUT_S = 10.0
DEFAULT_MAX_OUTPUT_BYTES = 64 * 1024
# Extra seconds the supervisor waits beyond the runner's own deadline before
# concluding the runner itself is stuck.
SUPERVISOR_GRACE_S = 2.0

REPLY_OK = "ok"
REPLY_EXCEPTION = "exception"
REPLY_TIMEOUT = "timeout"


class ExtractionKind(Enum):
    FENCED_BLOCK = "FencedBlock"
    WHOLE_COMPLETION = "WholeCompletion"


@dataclass(frozen=True, slots=True)
class ExtractedProgram:
    source: str
    provenance: ExtractionKind


_FENCE_RE = re.compile(r"```[ \t]*([A-Za-z0-9_+-]*)[ \t]*\n(.*?)```", re.DOTALL)
_OPEN_FENCE_RE = re.compile(r"```[ \t]*([A-Za-z0-9_+-]*)[ \t]*\n(.*)\Z", re.DOTALL)


def extract_program(completion: str) -> ExtractedProgram | None:
    """Pull runnable source out of a completion.

    The first fenced block wins; with no fence the whole completion is
    treated as source. Blank input yields no program at all.
    """
    m = _FENCE_RE.search(completion)
    if m is None:
        m = _OPEN_FENCE_RE.search(completion)
    if m is not None:
        source = m.group(2).strip("\n")
        if not source.strip():
            return None
        return ExtractedProgram(source=source, provenance=ExtractionKind.FENCED_BLOCK)
    source = completion.strip()
    if not source:
        return None
    return ExtractedProgram(source=source, provenance=ExtractionKind.WHOLE_COMPLETION)


class ExecutionStatus(Enum):
    SUCCESS = "Success"
    EXCEPTION = "Exception"
    TIMEOUT = "Timeout"
    EMPTY_OUTPUT = "EmptyOutput"
    NO_PROGRAM = "NoProgram"
    RUNNER_FAILURE = "RunnerFailure"


# Statuses caused by the harness rather than the generated program.
INFRASTRUCTURE_STATUSES = frozenset({ExecutionStatus.RUNNER_FAILURE})


@dataclass(frozen=True, slots=True)
class ExecutionOutcome:
    status: ExecutionStatus
    stdout: str = ""
    stderr: str = ""
    captured_answer: str | None = None
    duration_ms: int = 0


@dataclass(frozen=True, slots=True)
class ExecutionLimits:
    timeout_s: float = DEFAULT_TIMEOUT_S
    max_output_bytes: int = DEFAULT_MAX_OUTPUT_BYTES


@dataclass(frozen=True, slots=True)
class SandboxPolicy:
    """Limits sent to the runner; enforcement happens inside it."""

    allow_network: bool = False
    allow_file_write: bool = False
    allowed_imports: tuple[str, ...] = (
        "math",
        "cmath",
        "fractions",
        "decimal",
        "statistics",
        "itertools",
        "functools",
        "collections",
        "random",
        "re",
        "string",
        "sympy",
        "numpy",
        "scipy",
    )
    memory_limit_mb: int = 512

    def to_obj(self) -> dict:
        return {
            "allow_network": self.allow_network,
            "allow_file_write": self.allow_file_write,
            "allowed_imports": list(self.allowed_imports),
            "memory_limit_mb": self.memory_limit_mb,
        }


@dataclass(frozen=True, slots=True)
class RunnerReply:
    status: str
    stdout: str
    stderr: str
    duration_ms: int


class Runner(Protocol):
    def run(self, code: str, limits: ExecutionLimits, policy: SandboxPolicy) -> RunnerReply: ...


class RunnerFailure(Exception):
    """The runner could not produce a protocol reply at all."""


def _truncate(text: str, max_bytes: int) -> str:
    data = text.encode("utf-8")
    if len(data) <= max_bytes:
        return text
    return data[:max_bytes].decode("utf-8", errors="ignore")


class SubprocessRunner:
    """Spawns the configured runner command once per program.

    The child gets its own session so a timeout can kill every descendant.
    """

    def __init__(self, cmd: tuple[str, ...]):
        if not cmd:
            raise ValueError("runner command must not be empty")
        self.cmd = tuple(cmd)

    def run(self, code: str, limits: ExecutionLimits, policy: SandboxPolicy) -> RunnerReply:
        request = json.dumps(
            {"code": code, "timeout_s": limits.timeout_s, "policy": policy.to_obj()}
        )
        start = time.monotonic()
        try:
            proc = subprocess.Popen(
                self.cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                start_new_session=True,
            )
        except OSError as exc:
            raise RunnerFailure(f"could not spawn runner {self.cmd!r}: {exc}") from exc
        try:
            out, err = proc.communicate(request, timeout=limits.timeout_s + SUPERVISOR_GRACE_S)
        except subprocess.TimeoutExpired:
            self._kill_group(proc)
            out, err = proc.communicate()
            duration = int((time.monotonic() - start) * 1000)
            return RunnerReply(
                status=REPLY_TIMEOUT,
                stdout="",
                stderr="runner exceeded its deadline and was killed by the supervisor",
                duration_ms=duration,
            )
        duration = int((time.monotonic() - start) * 1000)
        line = out.strip().splitlines()[-1] if out.strip() else ""
        try:
            reply = json.loads(line)
            status = reply["status"]
            stdout = reply["stdout"]
            stderr = reply["stderr"]
        except (ValueError, KeyError, TypeError) as exc:
            raise RunnerFailure(
                f"runner violated protocol (exit {proc.returncode}): "
                f"stdout={out[:200]!r} stderr={err[:200]!r}"
            ) from exc
        if not isinstance(status, str) or not isinstance(stdout, str) or not isinstance(stderr, str):
            raise RunnerFailure(f"runner reply fields have wrong types: {line[:200]!r}")
        return RunnerReply(
            status=status,
            stdout=stdout,
            stderr=stderr,
            duration_ms=int(reply.get("duration_ms", duration)),
        )

    @staticmethod
    def _kill_group(proc: subprocess.Popen) -> None:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            proc.kill()


class InProcessRunner:
    """Runs programs with exec() in this interpreter — development/test only.

    Executions are serialized under a lock so concurrent callers never see
    each other's stdout. Timeouts are best-effort: the worker thread gets an
    async exception, which interrupts pure-Python loops but not blocking C
    calls. The subprocess shim is the isolated path.
    """

    SOURCE_NAME = "<rationale>"

    def __init__(self):
        self._lock = threading.Lock()

    def run(self, code: str, limits: ExecutionLimits, policy: SandboxPolicy) -> RunnerReply:
        with self._lock:
            buf = io.StringIO()
            outcome: dict = {"status": REPLY_OK, "stderr": ""}

            def work() -> None:
                try:
                    compiled = compile(code, self.SOURCE_NAME, "exec")
                    exec(compiled, {"__name__": "__rationale__"})
                except SystemExit:
                    pass
                except BaseException as exc:  # noqa: BLE001 — report, don't crash the harness
                    outcome["status"] = REPLY_EXCEPTION
                    outcome["stderr"] = self._format_error(exc)

            start = time.monotonic()
            with redirect_stdout(buf):
                worker = threading.Thread(target=work, daemon=True)
                worker.start()
                worker.join(limits.timeout_s)
                if worker.is_alive():
                    self._interrupt(worker)
                    worker.join(1.0)
                    outcome["status"] = REPLY_TIMEOUT
                    outcome["stderr"] = f"execution exceeded {limits.timeout_s} seconds"
            duration = int((time.monotonic() - start) * 1000)
            return RunnerReply(
                status=outcome["status"],
                stdout=buf.getvalue(),
                stderr=outcome["stderr"],
                duration_ms=duration,
            )

    def _format_error(self, exc: BaseException) -> str:
        lineno = None
        for frame in traceback.extract_tb(exc.__traceback__):
            if frame.filename == self.SOURCE_NAME:
                lineno = frame.lineno
        head = f"{self.SOURCE_NAME}:{lineno}: " if lineno is not None else ""
        tail = "".join(traceback.format_exception_only(type(exc), exc)).strip()
        return head + tail

    @staticmethod
    def _interrupt(worker: threading.Thread) -> None:
        import ctypes

        if worker.ident is None:
            return
        ctypes.pythonapi.PyThreadState_SetAsyncExc(
            ctypes.c_ulong(worker.ident), ctypes.py_object(SystemExit)
        )


class ScriptedRunner:
    """Maps program source to canned replies; sequences replay one by one."""

    def __init__(self, replies: dict[str, RunnerReply | list[RunnerReply]]):
        self._replies = dict(replies)
        self.calls: list[str] = []
        self._lock = threading.Lock()

    def run(self, code: str, limits: ExecutionLimits, policy: SandboxPolicy) -> RunnerReply:
        with self._lock:
            self.calls.append(code)
            if code not in self._replies:
                raise KeyError(f"scripted runner has no reply for code {code[:80]!r}")
            entry = self._replies[code]
            if isinstance(entry, list):
                reply = entry.pop(0) if len(entry) > 1 else entry[0]
                return reply
            return entry

    def calls_for(self, code: str) -> int:
        return sum(1 for c in self.calls if c == code)


def ok_reply(stdout: str, stderr: str = "") -> RunnerReply:
    return RunnerReply(status=REPLY_OK, stdout=stdout, stderr=stderr, duration_ms=1)


def exception_reply(stderr: str = "Exception") -> RunnerReply:
    return RunnerReply(status=REPLY_EXCEPTION, stdout="", stderr=stderr, duration_ms=1)


def timeout_reply() -> RunnerReply:
    return RunnerReply(status=REPLY_TIMEOUT, stdout="", stderr="timed out", duration_ms=1)


class ProgramExecutor:
    """Turns runner replies into execution outcomes, bounding concurrency."""

    def __init__(
        self,
        runner: Runner,
        limits: ExecutionLimits = ExecutionLimits(),
        policy: SandboxPolicy = SandboxPolicy(),
        pool_size: int = 4,
    ):
        if pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        self.runner = runner
        self.limits = limits
        self.policy = policy
        self._pool = threading.Semaphore(pool_size)

    def execute(self, source: str) -> ExecutionOutcome:
        start = time.monotonic()
        try:
            with self._pool:
                reply = self.runner.run(source, self.limits, self.policy)
        except RunnerFailure as exc:
            return ExecutionOutcome(
                status=ExecutionStatus.RUNNER_FAILURE,
                stderr=_truncate(str(exc), self.limits.max_output_bytes),
                duration_ms=int((time.monotonic() - start) * 1000),
            )
        stdout = _truncate(reply.stdout, self.limits.max_output_bytes)
        stderr = _truncate(reply.stderr, self.limits.max_output_bytes)
        if reply.status == REPLY_OK:
            lines = [line.strip() for line in stdout.splitlines() if line.strip()]
            if lines:
                status, captured = ExecutionStatus.SUCCESS, lines[-1]
            else:
                status, captured = ExecutionStatus.EMPTY_OUTPUT, None
        elif reply.status == REPLY_EXCEPTION:
            status, captured = ExecutionStatus.EXCEPTION, None
        elif reply.status == REPLY_TIMEOUT:
            status, captured = ExecutionStatus.TIMEOUT, None
        else:
            return ExecutionOutcome(
                status=ExecutionStatus.RUNNER_FAILURE,
                stderr=_truncate(f"runner reported unknown status {reply.status!r}", self.limits.max_output_bytes),
                duration_ms=reply.duration_ms,
            )
        return ExecutionOutcome(
            status=status,
            stdout=stdout,
            stderr=stderr,
            captured_answer=captured,
            duration_ms=reply.duration_ms,
        )

    def execute_completion(self, completion: str) -> ExecutionOutcome:
        """Extract and run in one step; no extractable program is NoProgram."""
        extracted = extract_program(completion)
        if extracted is None:
            return ExecutionOutcome(status=ExecutionStatus.NO_PROGRAM)
        return self.execute(extracted.source)
