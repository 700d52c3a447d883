"""Pluggable completion sources for full solutions and prefix rollouts.

Three backends share one request shape. The stub is a deterministic test
double drawing from a per-problem bank of known-good and known-bad
sources; the subprocess backend hands the request to a local command as
JSON on stdin; the HTTP backend posts a chat-style completion request.
Transient failures are retried with exponential backoff; configuration
mistakes are not.
"""

from __future__ import annotations

import json
import random
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

from . import cof
from .corpus import Problem

FULL_SOLUTION = "full_solution"
PREFIX_COMPLETION = "prefix_completion"
KINDS = (FULL_SOLUTION, PREFIX_COMPLETION)

# Sampling temperatures: exploratory for rollouts, tighter for candidates.
MC_TEMPERATURE = 1.0
CANDIDATE_TEMPERATURE = 0.7

RETRY_ATTEMPTS = 3
RETRY_BASE_DELAY = 1.0


class PolicyError(RuntimeError):
    """``kind`` is 'transient' (worth retrying) or 'config' (not)."""

    def __init__(self, kind: str, message: str) -> None:
        super().__init__(message)
        self.kind = kind

    @property
    def retryable(self) -> bool:
        return self.kind == "transient"


@dataclass(frozen=True)
class PolicyRequest:
    kind: str
    prompt: str
    prefix: str
    temperature: float
    seed: int
    # Local routing hint for the stub; never serialized to a backend.
    problem_id: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise PolicyError("config", f"unknown request kind {self.kind!r}")
        if self.temperature < 0:
            raise PolicyError("config", f"temperature must be >= 0, got {self.temperature}")

    def to_wire(self) -> dict:
        return {
            "kind": self.kind,
            "prompt": self.prompt,
            "prefix": self.prefix,
            "temperature": self.temperature,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class StubSpec:
    pass_probability: float
    template_bank: dict[str, dict[str, list[str]]]  # id -> {"correct": [...], "broken": [...]}

    def __post_init__(self) -> None:
        if not (0.0 <= self.pass_probability <= 1.0):
            raise PolicyError("config", "pass_probability must lie in [0, 1]")


class StubBackend:
    """Deterministic bank-backed double: a pure function of (request, spec).

    A draw picks the correct pool with ``pass_probability`` and a source
    uniformly within the pool. Completions are full sources prefixed with
    a newline; since the bank programs are flat top-level functions with a
    trailing entry call, appending one to any step prefix yields a
    complete program whose behavior is the template's (later definitions
    rebind earlier names).
    """

    def __init__(self, spec: StubSpec) -> None:
        self.spec = spec

    def sample(self, request: PolicyRequest) -> str:
        if request.problem_id is None:
            raise PolicyError("config", "stub backend needs a problem_id on the request")
        pools = self.spec.template_bank.get(request.problem_id)
        if not pools:
            raise PolicyError("config", f"stub bank has no templates for {request.problem_id!r}")
        rng = random.Random(f"{request.seed}:{request.problem_id}:{request.kind}")
        name = "correct" if rng.random() < self.spec.pass_probability else "broken"
        candidates = pools.get(name) or pools.get("correct") or pools.get("broken")
        if not candidates:
            raise PolicyError("config", f"stub bank pool for {request.problem_id!r} is empty")
        source = candidates[rng.randrange(len(candidates))]
        if request.kind == FULL_SOLUTION:
            return source
        glue = "" if (not request.prefix or request.prefix.endswith("\n")) else "\n"
        return glue + "\n" + source


class SubprocessBackend:
    """One child process per request: request JSON in, completion JSON out."""

    def __init__(self, command: str | list[str], timeout: float = 60.0, parallelism: int = 4) -> None:
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.argv:
            raise PolicyError("config", "subprocess backend needs a nonempty command")
        self.timeout = timeout
        self._gate = threading.Semaphore(max(1, parallelism))

    def sample(self, request: PolicyRequest) -> str:
        with self._gate:
            try:
                proc = subprocess.run(
                    self.argv,
                    input=json.dumps(request.to_wire()),
                    capture_output=True,
                    text=True,
                    timeout=self.timeout,
                )
            except FileNotFoundError as exc:
                raise PolicyError("config", f"policy command not found: {exc}") from exc
            except subprocess.TimeoutExpired as exc:
                raise PolicyError("transient", f"policy command timed out after {self.timeout}s") from exc
        if proc.returncode != 0:
            raise PolicyError(
                "transient",
                f"policy command exited {proc.returncode}: {proc.stderr.strip()[:500]}",
            )
        return _parse_completion_payload(proc.stdout)


class HTTPBackend:
    """Chat-completions style endpoint. The prefix rides inside the user message."""

    def __init__(
        self,
        url: str,
        model: str = "default",
        api_key: str | None = None,
        timeout: float = 120.0,
        parallelism: int = 4,
    ) -> None:
        if not url:
            raise PolicyError("config", "http backend needs a url")
        self.url = url
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self._gate = threading.Semaphore(max(1, parallelism))

    def sample(self, request: PolicyRequest) -> str:
        content = request.prompt
        if request.kind == PREFIX_COMPLETION and request.prefix:
            content = request.prompt + "\n\n" + request.prefix
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": request.temperature,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        with self._gate:
            try:
                resp = requests.post(self.url, json=body, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                raise PolicyError("transient", f"policy endpoint unreachable: {exc}") from exc
        if resp.status_code >= 500:
            raise PolicyError("transient", f"policy endpoint returned {resp.status_code}")
        if resp.status_code >= 400:
            raise PolicyError("config", f"policy endpoint rejected the request: {resp.status_code}")
        try:
            return str(resp.json()["choices"][0]["message"]["content"])
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise PolicyError("transient", f"malformed completion payload: {exc}") from exc


def _parse_completion_payload(text: str) -> str:
    try:
        obj = json.loads(text)
        completion = obj["completion"]
    except (ValueError, KeyError, TypeError) as exc:
        raise PolicyError("transient", f"malformed completion payload: {exc}") from exc
    if not isinstance(completion, str):
        raise PolicyError("transient", "completion field must be a string")
    return completion


def sample(
    request: PolicyRequest,
    backend,
    attempts: int = RETRY_ATTEMPTS,
    base_delay: float = RETRY_BASE_DELAY,
) -> str:
    """Draw one completion, retrying transient failures with backoff."""
    last: PolicyError | None = None
    for attempt in range(attempts):
        try:
            return backend.sample(request)
        except PolicyError as exc:
            if not exc.retryable:
                raise
            last = exc
            if attempt + 1 < attempts:
                time.sleep(base_delay * (2 ** attempt))
    raise last


def generate_candidates(
    problem: Problem,
    n: int,
    backend,
    seed_base: int,
    temperature: float = CANDIDATE_TEMPERATURE,
    attempts: int = RETRY_ATTEMPTS,
    base_delay: float = RETRY_BASE_DELAY,
) -> list[str]:
    """n independent full-solution samples, seeds seed_base .. seed_base+n-1."""
    if n < 1:
        raise PolicyError("config", f"candidate count must be >= 1, got {n}")
    prompt = cof.cof_prompt(problem)
    out = []
    for i in range(n):
        request = PolicyRequest(
            kind=FULL_SOLUTION,
            prompt=prompt,
            prefix="",
            temperature=temperature,
            seed=seed_base + i,
            problem_id=problem.id,
        )
        out.append(sample(request, backend, attempts=attempts, base_delay=base_delay))
    return out


def load_template_bank(directory: str | Path) -> dict[str, dict[str, list[str]]]:
    """Read a bank from ``<problem-id>__{correct,broken}_<n>.py`` files."""
    directory = Path(directory)
    bank: dict[str, dict[str, list[str]]] = {}
    for path in sorted(directory.glob("*.py")):
        stem = path.stem
        if "__" not in stem:
            continue
        problem_id, _, tail = stem.rpartition("__")
        role = tail.split("_")[0]
        if role not in ("correct", "broken"):
            continue
        bank.setdefault(problem_id, {"correct": [], "broken": []})[role].append(
            path.read_text(encoding="utf-8")
        )
    if not bank:
        raise PolicyError("config", f"no template sources found under {directory}")
    return bank
