"""Function-level decomposition of candidate programs, and the generation prompt.

A program is treated as: preamble (imports, constants), an ordered list of
steps (one per top-level function), and an optional trailing epilogue (the
entry-point call or guard). The scanner is line oriented and tolerant: it
keys on zero-indentation ``def`` / ``async def`` lines and never executes
or fully parses the code. Concatenating preamble, step texts, and epilogue
reproduces the input byte for byte; that invariant is what downstream
prefix construction relies on.

Attachment rules for material between functions:
  * decorator and comment lines directly above a definition open that
    definition's step (they introduce it);
  * other module-level statements stay with the preceding step;
  * a trailing run of zero-indentation statements after the last function
    becomes the epilogue.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

from .corpus import Problem

_DEF_RE = re.compile(r"^(?:async[ \t]+)?def[ \t]+([^\W\d]\w*)")

PROMPT_VERSION = 1


class DecompositionError(ValueError):
    """Source cannot be split into steps. ``kind`` is 'empty' or 'no_functions'."""

    def __init__(self, kind: str, message: str) -> None:
        super().__init__(message)
        self.kind = kind


@dataclass(frozen=True)
class Step:
    index: int  # 1-based position in the program
    name: str
    docstring: str | None
    text: str
    line_span: tuple[int, int]  # 1-based inclusive line numbers in the source


@dataclass(frozen=True)
class Decomposition:
    preamble: str
    steps: tuple[Step, ...]
    epilogue: str

    @property
    def source(self) -> str:
        return self.preamble + "".join(s.text for s in self.steps) + self.epilogue


@dataclass(frozen=True)
class PrefixState:
    """A scored unit: the problem statement plus the first ``step_index`` steps."""

    problem_id: str
    trajectory_id: str
    step_index: int
    total_steps: int
    text: str
    is_final: bool


def _is_blank(line: str) -> bool:
    return line.strip() == ""


def _is_comment(line: str) -> bool:
    return line.startswith("#")


def _is_decorator(line: str) -> bool:
    return line.startswith("@")


def _is_def(line: str) -> bool:
    return _DEF_RE.match(line) is not None


def _zero_indent(line: str) -> bool:
    return bool(line) and line[0] not in (" ", "\t")


def _line_states(lines: list[str]) -> list[tuple[int, str | None]]:
    """Bracket depth and open string quote at the start of each line.

    Returns ``len(lines) + 1`` entries; the last one is the state after the
    final line. Brackets inside strings and comments do not count, and a
    backslash escapes the next character (which also keeps raw strings from
    closing early). Damage is contained rather than propagated: a
    single-quoted string left open at the end of a line is dropped, and a
    triple-quoted string still open at the end of the file is rescanned as
    plain text, so one bad literal cannot swallow everything after it.
    """

    def scan(skip: set[tuple[int, int]]) -> tuple[list[tuple[int, str | None]], tuple[int, int] | None]:
        states: list[tuple[int, str | None]] = []
        depth = 0
        quote: str | None = None
        opened_at: tuple[int, int] | None = None
        for lineno, line in enumerate(lines):
            states.append((depth, quote))
            i = 0
            n = len(line)
            while i < n:
                ch = line[i]
                if quote is not None:
                    if ch == "\\":
                        i += 2
                        continue
                    if line.startswith(quote, i):
                        i += len(quote)
                        quote = None
                        continue
                    i += 1
                    continue
                if ch == "#":
                    break
                if ch in "'\"":
                    if (lineno, i) in skip:
                        i += 1
                        continue
                    if line.startswith(ch * 3, i):
                        quote = ch * 3
                        opened_at = (lineno, i)
                        i += 3
                    else:
                        quote = ch
                        opened_at = (lineno, i)
                        i += 1
                    continue
                if ch in "([{":
                    depth += 1
                elif ch in ")]}":
                    depth = max(depth - 1, 0)
                i += 1
            if quote is not None and len(quote) == 1:
                quote = None
        states.append((depth, quote))
        return states, opened_at

    skip: set[tuple[int, int]] = set()
    while True:
        states, opened_at = scan(skip)
        if states[-1][1] is None or opened_at is None or opened_at in skip:
            return states
        skip.add(opened_at)


def decompose(source: str) -> Decomposition:
    """Split a program into preamble, function steps, and epilogue."""
    if source.strip() == "":
        raise DecompositionError("empty", "source is empty")
    lines = source.splitlines(keepends=True)
    states = _line_states(lines)

    def _code_line(i: int) -> bool:
        # A line that opens inside a string or a bracket continuation is
        # never a structural boundary, whatever it looks like.
        depth, quote = states[i]
        return depth == 0 and quote is None

    def_idx = [i for i, line in enumerate(lines) if _is_def(line) and _code_line(i)]
    if not def_idx:
        raise DecompositionError("no_functions", "source defines no top-level function")

    # Pull each step start up over the decorator/comment block that sits
    # directly above its def. Blank lines inside the block are kept, blank
    # lines at the top of it are left with the previous span.
    starts: list[int] = []
    for d in def_idx:
        s = d
        while s > 0 and _code_line(s - 1) and (
            _is_comment(lines[s - 1]) or _is_decorator(lines[s - 1]) or _is_blank(lines[s - 1])
        ):
            s -= 1
        while s < d and _is_blank(lines[s]):
            s += 1
        starts.append(s)

    # The epilogue opens at the first zero-indentation statement after the
    # last def line, then is pulled back over the comments directly above
    # it. Separator blanks stay with the last step.
    end = len(lines)
    epilogue_start = end
    for i in range(def_idx[-1] + 1, end):
        line = lines[i]
        if not _code_line(i) or _is_blank(line):
            continue
        if _zero_indent(line) and not _is_def(line) and not _is_comment(line):
            epilogue_start = i
            break
    if epilogue_start < end:
        e = epilogue_start
        while e > def_idx[-1] + 1 and _code_line(e - 1) and (
            _is_comment(lines[e - 1]) or _is_blank(lines[e - 1])
        ):
            e -= 1
        while e < epilogue_start and _is_blank(lines[e]):
            e += 1
        epilogue_start = e

    steps = []
    for k, s in enumerate(starts):
        stop = starts[k + 1] if k + 1 < len(starts) else epilogue_start
        text = "".join(lines[s:stop])
        name = _DEF_RE.match(lines[def_idx[k]]).group(1)
        steps.append(
            Step(
                index=k + 1,
                name=name,
                docstring=_extract_docstring_text(lines[s:stop]),
                text=text,
                line_span=(s + 1, stop),
            )
        )

    return Decomposition(
        preamble="".join(lines[: starts[0]]),
        steps=tuple(steps),
        epilogue="".join(lines[epilogue_start:]),
    )


def _extract_docstring_text(step_lines: list[str]) -> str | None:
    """Docstring of the first definition in the step, or None.

    Tolerant: the signature may span lines (bracket counting), the literal
    may carry a string prefix, and an unterminated literal reads as absent.
    """
    states = _line_states(step_lines)
    d = next(
        (i for i, line in enumerate(step_lines) if _is_def(line) and states[i] == (0, None)),
        None,
    )
    if d is None:
        return None

    # Walk the signature until brackets close; the body starts after that.
    sig_end = next(
        (i for i in range(d, len(step_lines)) if states[i + 1] == (0, None)),
        None,
    )
    if sig_end is None:
        return None

    body = next(
        (i for i in range(sig_end + 1, len(step_lines)) if not _is_blank(step_lines[i])),
        None,
    )
    if body is None:
        return None
    stripped = step_lines[body].lstrip()
    m = re.match(r"^[rRbBuUfF]{0,2}('''|\"\"\")", stripped)
    if not m:
        return None
    quote = m.group(1)
    after = stripped[m.end():]

    close = after.find(quote)
    if close >= 0:
        return after[:close].strip()
    parts = [after]
    for i in range(body + 1, len(step_lines)):
        close = step_lines[i].find(quote)
        if close >= 0:
            parts.append(step_lines[i][:close])
            return "".join(parts).strip()
        parts.append(step_lines[i])
    return None  # unterminated literal


def extract_docstring(step: Step) -> str | None:
    return _extract_docstring_text(step.text.splitlines(keepends=True))


def prefixes(problem: Problem, decomp: Decomposition, trajectory_id: str = "") -> list[PrefixState]:
    """All step prefixes of a decomposition, shortest first.

    Prefix i carries the statement, the preamble, and steps 1..i. The
    epilogue is never included; completions or judging re-add it.
    """
    n = len(decomp.steps)
    out = []
    code = decomp.preamble
    for i, step in enumerate(decomp.steps, start=1):
        code = code + step.text
        out.append(
            PrefixState(
                problem_id=problem.id,
                trajectory_id=trajectory_id,
                step_index=i,
                total_steps=n,
                text=_prefix_text(problem.statement, code),
                is_final=(i == n),
            )
        )
    return out


def _prefix_text(statement: str, code: str) -> str:
    return statement + "\n\n" + code


def prefix_code(prefix: PrefixState, problem: Problem) -> str:
    """Recover the code portion of a prefix (statement header removed)."""
    header = problem.statement + "\n\n"
    if not prefix.text.startswith(header):
        raise ValueError(
            f"prefix for {prefix.problem_id} step {prefix.step_index} does not carry "
            "the expected statement header"
        )
    return prefix.text[len(header):]


def prompt_text() -> str:
    """The generation instruction block, byte for byte as shipped."""
    return resources.files("cofprm").joinpath("assets/cof_prompt.txt").read_text(encoding="utf-8")


def cof_prompt(problem: Problem) -> str:
    """Full generation prompt: instruction block, blank line, statement."""
    return prompt_text().rstrip("\n") + "\n\n" + problem.statement
