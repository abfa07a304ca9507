"""One-shot program runner speaking a JSON line protocol.

The harness spawns a fresh runner process per program. The request arrives as
a single JSON document on stdin:

    {"code": "<python source>", "timeout_s": 10.0, "policy": {...}}

and the reply is the last line this process writes to its real stdout:

    {"status": "ok" | "exception" | "timeout",
     "stdout": "<everything the program printed>",
     "stderr": "<error description, empty on success>",
     "duration_ms": 123}

While the program runs, file descriptor 1 points at a spool file, so nothing
the program prints can impersonate the protocol reply. The policy guards are
installed once and never removed — the process exits after a single request,
which is what makes one-way patching safe.
"""

from __future__ import annotations

import builtins
import io
import json
import os
import resource
import signal
import socket
import sys
import tempfile
import time
import traceback

SOURCE_NAME = "<rationale>"
DEFAULT_TIMEOUT_S = 10.0
REPLY_CAP_BYTES = 1 << 20  # keep replies bounded even for very chatty programs

DEFAULT_ALLOWED_IMPORTS = (
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


class _Deadline(BaseException):
    """Raised by the alarm handler; BaseException so programs cannot swallow it."""


def install_guards(policy: dict) -> None:
    """Apply the sandbox policy to this process.

    The import guard only fires for import statements whose calling frame is
    the program itself; modules on the allow list may import whatever they
    need internally.
    """
    limit_mb = int(policy.get("memory_limit_mb", 512))
    try:
        resource.setrlimit(resource.RLIMIT_AS, (limit_mb << 20, limit_mb << 20))
    except (ValueError, OSError):
        pass  # best effort: some environments refuse to lower the cap

    if not policy.get("allow_network", False):

        def deny_network(*args, **kwargs):
            raise PermissionError("network access is disabled by policy")

        socket.socket = deny_network  # type: ignore[misc]
        socket.create_connection = deny_network  # type: ignore[assignment]
        socket.getaddrinfo = deny_network  # type: ignore[assignment]

    if not policy.get("allow_file_write", False):
        real_open = builtins.open

        def guarded_open(file, mode="r", *args, **kwargs):
            if any(flag in mode for flag in "wax+"):
                raise PermissionError(f"file writes are disabled by policy (mode {mode!r})")
            return real_open(file, mode, *args, **kwargs)

        builtins.open = guarded_open  # type: ignore[assignment]
        io.open = guarded_open  # type: ignore[assignment]

    allowed = frozenset(policy.get("allowed_imports", DEFAULT_ALLOWED_IMPORTS))
    real_import = builtins.__import__

    def guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
        caller = sys._getframe(1)
        if caller.f_code.co_filename == SOURCE_NAME:
            root = name.split(".")[0]
            if root not in allowed:
                raise ImportError(f"import of {root!r} is not allowed by policy")
        return real_import(name, globals, locals, fromlist, level)

    builtins.__import__ = guarded_import  # type: ignore[assignment]


def format_error(exc: BaseException) -> str:
    """location-prefixed one-line error, e.g. "<rationale>:3: ValueError: bad"."""
    lineno = None
    for frame in traceback.extract_tb(exc.__traceback__):
        if frame.filename == SOURCE_NAME:
            lineno = frame.lineno
    head = f"{SOURCE_NAME}:{lineno}: " if lineno is not None else ""
    tail = "".join(traceback.format_exception_only(type(exc), exc)).strip()
    return head + tail


def execute(code: str, timeout_s: float) -> tuple[str, str]:
    """Run the program under a wall-clock alarm; returns (status, stderr text)."""

    def on_alarm(signum, frame):
        raise _Deadline

    signal.signal(signal.SIGALRM, on_alarm)
    signal.setitimer(signal.ITIMER_REAL, timeout_s)
    try:
        compiled = compile(code, SOURCE_NAME, "exec")
        exec(compiled, {"__name__": "__rationale__"})
    except _Deadline:
        return "timeout", f"execution exceeded {timeout_s} seconds"
    except SystemExit:
        pass
    except BaseException as exc:  # noqa: BLE001 — report, don't crash the runner
        return "exception", format_error(exc)
    finally:
        signal.setitimer(signal.ITIMER_REAL, 0)
    return "ok", ""


def run_request(request: dict) -> dict:
    code = request["code"]
    if not isinstance(code, str):
        raise TypeError("request field 'code' must be a string")
    timeout_s = float(request.get("timeout_s", DEFAULT_TIMEOUT_S))
    policy = request.get("policy") or {}
    if not isinstance(policy, dict):
        raise TypeError("request field 'policy' must be an object")

    spool = tempfile.TemporaryFile()  # created before the write guard goes up
    real_stdout = os.dup(1)
    install_guards(policy)
    start = time.monotonic()
    try:
        sys.stdout.flush()
        os.dup2(spool.fileno(), 1)
        try:
            status, stderr_text = execute(code, timeout_s)
        except _Deadline:  # a last-instant alarm escaping execute()
            status, stderr_text = "timeout", f"execution exceeded {timeout_s} seconds"
        except BaseException as exc:  # noqa: BLE001
            status, stderr_text = "exception", format_error(exc)
    finally:
        sys.stdout.flush()
        os.dup2(real_stdout, 1)
        os.close(real_stdout)
    duration_ms = int((time.monotonic() - start) * 1000)

    spool.seek(0)
    captured = spool.read(REPLY_CAP_BYTES).decode("utf-8", errors="replace")
    spool.close()
    return {
        "status": status,
        "stdout": captured,
        "stderr": stderr_text,
        "duration_ms": duration_ms,
    }


def main() -> int:
    raw = sys.stdin.read()
    try:
        request = json.loads(raw)
        if not isinstance(request, dict):
            raise TypeError("request must be a JSON object")
        reply = run_request(request)
    except (ValueError, KeyError, TypeError) as exc:
        print(f"potrunner: bad request: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(reply), flush=True)
    return 0
