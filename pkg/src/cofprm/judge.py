"""Execution of candidate programs against unit tests, one child per test.

Every test runs in a fresh interpreter process with a fresh temporary
working directory and a minimal environment, so one candidate cannot leak
state into another run through files or environment variables. Outputs
are compared after trailing-whitespace normalization. All tests always
run; there is no fail-fast, because per-test outcomes feed labels.

Wall time is charged for the whole child lifetime, interpreter startup
included. The ``inprocess`` vehicle trades isolation for speed (no child
process, code runs under ``exec`` in this interpreter); it exists for
high-volume rollout labeling and tests, and is never the default.
"""

from __future__ import annotations

import io
import os
import signal
import subprocess
import sys
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .corpus import TestCase, normalize_output

PASS = "pass"
WRONG_ANSWER = "wrong_answer"
TIMEOUT = "timeout"
RUNTIME_ERROR = "runtime_error"
OUTPUT_LIMIT = "output_limit"

STATUSES = (PASS, WRONG_ANSWER, TIMEOUT, RUNTIME_ERROR, OUTPUT_LIMIT)

VEHICLES = ("subprocess", "inprocess")


class JudgeEnvironmentError(Exception):
    """The judging machinery itself is unusable (interpreter missing, sandbox setup failed)."""


@dataclass(frozen=True)
class Limits:
    wall_time_per_test: float = 5.0
    memory_bytes: int = 512 * 1024 * 1024
    max_output_bytes: int = 1024 * 1024

    def __post_init__(self) -> None:
        if self.wall_time_per_test <= 0:
            raise ValueError("wall_time_per_test must be positive")
        if self.memory_bytes <= 0 or self.max_output_bytes <= 0:
            raise ValueError("limits must be positive")


DEFAULT_LIMITS = Limits()


@dataclass(frozen=True)
class Verdict:
    passed: bool  # true iff every test passed
    per_test: tuple[str, ...]
    wall_time_total: float


def final_label(verdict: Verdict) -> float:
    return 1.0 if verdict.passed else 0.0


def resolve_interpreter(explicit: str | None = None) -> str:
    """Interpreter for candidate programs. JUDGE_INTERPRETER overrides."""
    path = explicit or os.environ.get("JUDGE_INTERPRETER") or sys.executable
    if not path or not Path(path).exists():
        raise JudgeEnvironmentError(f"candidate interpreter not found: {path!r}")
    return path


def run(
    source: str,
    tests: tuple[TestCase, ...] | list[TestCase],
    limits: Limits = DEFAULT_LIMITS,
    workers: int = 1,
    vehicle: str = "subprocess",
    interpreter: str | None = None,
) -> Verdict:
    """Judge one program against all tests; returns per-test statuses in order."""
    if not tests:
        raise ValueError("tests must be nonempty")
    if vehicle not in VEHICLES:
        raise ValueError(f"unknown judge vehicle {vehicle!r}")
    if vehicle == "inprocess":
        return _run_inprocess(source, list(tests), limits)

    interp = resolve_interpreter(interpreter)
    try:
        workdir = tempfile.TemporaryDirectory(prefix="judge-")
    except OSError as exc:
        raise JudgeEnvironmentError(f"sandbox setup failed: {exc}") from exc
    with workdir as wd:
        src_path = Path(wd) / "candidate.py"
        src_path.write_text(source, encoding="utf-8")
        results: list[tuple[str, float] | None] = [None] * len(tests)
        if workers <= 1:
            for i, test in enumerate(tests):
                results[i] = _run_one_subprocess(interp, src_path, test, limits)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = {
                    pool.submit(_run_one_subprocess, interp, src_path, test, limits): i
                    for i, test in enumerate(tests)
                }
                for fut, i in futures.items():
                    results[i] = fut.result()
    statuses = tuple(r[0] for r in results)
    total = sum(r[1] for r in results)
    return Verdict(passed=all(s == PASS for s in statuses), per_test=statuses, wall_time_total=total)


def _child_env() -> dict[str, str]:
    # Candidates see only what they need; parent environment never leaks.
    return {
        "PATH": os.environ.get("PATH", "/usr/bin:/bin"),
        "LC_ALL": "C.UTF-8",
        "PYTHONIOENCODING": "utf-8",
        "PYTHONDONTWRITEBYTECODE": "1",
        "PYTHONHASHSEED": "0",
    }


def _run_one_subprocess(
    interp: str, src_path: Path, test: TestCase, limits: Limits
) -> tuple[str, float]:
    start = time.monotonic()
    deadline = start + limits.wall_time_per_test
    with tempfile.TemporaryDirectory(prefix="judge-cwd-") as cwd:
        try:
            proc = subprocess.Popen(
                [interp, str(src_path)],
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                cwd=cwd,
                env=_child_env(),
            )
        except OSError as exc:
            raise JudgeEnvironmentError(f"failed to spawn interpreter: {exc}") from exc
        _apply_memory_limit(proc.pid, limits.memory_bytes)
        try:
            out, _err = proc.communicate(
                input=test.input.encode("utf-8"),
                timeout=max(deadline - time.monotonic(), 0.001),
            )
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.communicate()
            return TIMEOUT, time.monotonic() - start
        elapsed = time.monotonic() - start
    if len(out) > limits.max_output_bytes:
        return OUTPUT_LIMIT, elapsed
    if proc.returncode != 0:
        return RUNTIME_ERROR, elapsed
    actual = out.decode("utf-8", errors="replace")
    if normalize_output(actual) == normalize_output(test.expected_output):
        return PASS, elapsed
    return WRONG_ANSWER, elapsed


def _apply_memory_limit(pid: int, memory_bytes: int) -> None:
    try:
        import resource

        resource.prlimit(pid, resource.RLIMIT_AS, (memory_bytes, memory_bytes))
    except (ImportError, AttributeError, OSError):
        pass  # platform without prlimit, or child already gone


class _InprocessTimeout(Exception):
    pass


def _run_inprocess(source: str, tests: list[TestCase], limits: Limits) -> Verdict:
    # Sequential on purpose: stdio redirection is process-global state.
    try:
        code = compile(source, "<candidate>", "exec")
    except (SyntaxError, ValueError):
        return Verdict(False, tuple(RUNTIME_ERROR for _ in tests), 0.0)
    statuses = []
    total = 0.0
    for test in tests:
        status, elapsed = _run_one_inprocess(code, test, limits)
        statuses.append(status)
        total += elapsed
    return Verdict(all(s == PASS for s in statuses), tuple(statuses), total)


def _run_one_inprocess(code, test: TestCase, limits: Limits) -> tuple[str, float]:
    out = io.StringIO()
    old_stdin, old_stdout = sys.stdin, sys.stdout
    use_alarm = threading.current_thread() is threading.main_thread()
    start = time.monotonic()
    status = PASS
    try:
        sys.stdin = io.StringIO(test.input)
        sys.stdout = out
        if use_alarm:
            def _on_alarm(signum, frame):
                raise _InprocessTimeout()

            old_handler = signal.signal(signal.SIGALRM, _on_alarm)
            signal.setitimer(signal.ITIMER_REAL, limits.wall_time_per_test)
        try:
            exec(code, {"__name__": "__main__"})
        except _InprocessTimeout:
            status = TIMEOUT
        except SystemExit as exc:
            if exc.code not in (None, 0):
                status = RUNTIME_ERROR
        except KeyboardInterrupt:
            raise
        except BaseException:
            status = RUNTIME_ERROR
        finally:
            if use_alarm:
                signal.setitimer(signal.ITIMER_REAL, 0.0)
                signal.signal(signal.SIGALRM, old_handler)
    finally:
        sys.stdin, sys.stdout = old_stdin, old_stdout
    elapsed = time.monotonic() - start
    if status != PASS:
        return status, elapsed
    text = out.getvalue()
    if len(text.encode("utf-8")) > limits.max_output_bytes:
        return OUTPUT_LIMIT, elapsed
    if normalize_output(text) == normalize_output(test.expected_output):
        return PASS, elapsed
    return WRONG_ANSWER, elapsed
