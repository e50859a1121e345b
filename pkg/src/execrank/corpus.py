"""Data model and JSONL I/O for programming-problem corpora.

A corpus is one problem record per line, with optional sibling files
``<name>.candidates.jsonl`` and ``<name>.tests.jsonl`` holding sampled
solutions and generated test cases keyed by problem id.
"""

from __future__ import annotations

import ast
import json
import logging
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

log = logging.getLogger(__name__)

STDIO_ENTRY_POINT = "solution"
STDIO_HEADER = "def solution(stdin: str) -> str:"


class CorpusError(ValueError):
    """Malformed corpus file or a record violating a data-model invariant."""


class IoMode(str, Enum):
    ASSERTION = "assertion"
    STDIO = "stdio"


class TestKind(str, Enum):
    ASSERTION = "assertion"
    STDIO = "stdio"


class TestOrigin(str, Enum):
    GENERATED = "generated"
    GROUND_TRUTH = "ground_truth"
    EXAMPLE = "example"


@dataclass(frozen=True)
class TestCase:
    """One executable check: an assert statement or a stdin/stdout pair."""

    kind: TestKind
    assertion: Optional[str] = None
    stdin: Optional[str] = None
    expected_stdout: Optional[str] = None
    origin: TestOrigin = TestOrigin.GENERATED
    # Stable identifier used by execution matrices and rankings; assigned
    # automatically (g#/gt#/ex# per problem) when records carry none.
    id: Optional[str] = None

    def validate(self, entry_point: Optional[str] = None) -> None:
        if self.kind is TestKind.ASSERTION:
            if not self.assertion:
                raise CorpusError("assertion test case without assertion text")
            if not _starts_with_assert(self.assertion):
                raise CorpusError(
                    f"assertion must begin with the assert keyword: {self.assertion!r}"
                )
            if entry_point and not contains_token(self.assertion, entry_point):
                raise CorpusError(
                    f"assertion does not mention entry point {entry_point!r}: "
                    f"{self.assertion!r}"
                )
        else:
            if self.stdin is None or self.expected_stdout is None:
                raise CorpusError("stdio test case requires stdin and expected_stdout")


@dataclass(frozen=True)
class Candidate:
    """One sampled code solution after post-processing."""

    id: str
    body: str
    sample_index: int
    logprob: Optional[float] = None
    normalized_body: Optional[str] = None


@dataclass(frozen=True)
class Problem:
    """One programming task: context, entry point, and its attached tests."""

    id: str
    context: str
    entry_point: str
    canonical_solution: Optional[str] = None
    ground_truth_tests: tuple[TestCase, ...] = ()
    example_tests: tuple[TestCase, ...] = ()
    io_mode: IoMode = IoMode.ASSERTION

    def validate(self, require_ground_truth: bool = False) -> None:
        if not self.entry_point or not self.entry_point.isidentifier():
            raise CorpusError(
                f"problem {self.id!r}: entry_point must be a non-empty identifier"
            )
        if self.entry_point not in self.context:
            raise CorpusError(
                f"problem {self.id!r}: entry_point {self.entry_point!r} "
                "does not occur in context"
            )
        if require_ground_truth and not self.ground_truth_tests:
            raise CorpusError(f"problem {self.id!r}: ground_truth_tests is empty")
        expected_kind = (
            TestKind.STDIO if self.io_mode is IoMode.STDIO else TestKind.ASSERTION
        )
        for tc in (*self.ground_truth_tests, *self.example_tests):
            if tc.kind is not expected_kind:
                raise CorpusError(
                    f"problem {self.id!r}: test kind {tc.kind.value} does not "
                    f"match io_mode {self.io_mode.value}"
                )
            tc.validate(self.entry_point if tc.kind is TestKind.ASSERTION else None)


@dataclass
class Corpus:
    """All problems of a benchmark plus per-problem candidate/test stores."""

    name: str
    problems: list[Problem] = field(default_factory=list)
    candidates: dict[str, list[Candidate]] = field(default_factory=dict)
    generated_tests: dict[str, list[TestCase]] = field(default_factory=dict)

    def problem(self, problem_id: str) -> Problem:
        for p in self.problems:
            if p.id == problem_id:
                return p
        raise KeyError(problem_id)


def _starts_with_assert(text: str) -> bool:
    head = text.lstrip()
    return head == "assert" or head.startswith(("assert ", "assert(", "assert\t"))


def contains_token(snippet: str, name: str) -> bool:
    """True if ``name`` occurs as an identifier token (not merely a substring)."""
    try:
        tree = ast.parse(snippet)
    except SyntaxError:
        return bool(re.search(rf"\b{re.escape(name)}\b", snippet))
    for node in ast.walk(tree):
        if isinstance(node, ast.Name) and node.id == name:
            return True
        if isinstance(node, ast.Attribute) and node.attr == name:
            return True
    return False


# --------------------------------------------------------------------------
# JSONL round-trip
# --------------------------------------------------------------------------

def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def test_to_record(tc: TestCase) -> dict:
    rec: dict = {"kind": tc.kind.value, "origin": tc.origin.value}
    if tc.id is not None:
        rec["id"] = tc.id
    if tc.assertion is not None:
        rec["assertion"] = tc.assertion
    if tc.stdin is not None:
        rec["stdin"] = tc.stdin
    if tc.expected_stdout is not None:
        rec["expected_stdout"] = tc.expected_stdout
    return rec


def test_from_record(rec: dict) -> TestCase:
    return TestCase(
        kind=TestKind(rec["kind"]),
        assertion=rec.get("assertion"),
        stdin=rec.get("stdin"),
        expected_stdout=rec.get("expected_stdout"),
        origin=TestOrigin(rec.get("origin", "generated")),
        id=rec.get("id"),
    )


def candidate_to_record(c: Candidate) -> dict:
    rec: dict = {"id": c.id, "body": c.body, "sample_index": c.sample_index}
    if c.logprob is not None:
        rec["logprob"] = c.logprob
    if c.normalized_body is not None:
        rec["normalized_body"] = c.normalized_body
    return rec


def candidate_from_record(rec: dict) -> Candidate:
    return Candidate(
        id=rec["id"],
        body=rec["body"],
        sample_index=int(rec["sample_index"]),
        logprob=rec.get("logprob"),
        normalized_body=rec.get("normalized_body"),
    )


def problem_to_record(p: Problem) -> dict:
    rec: dict = {
        "id": p.id,
        "context": p.context,
        "entry_point": p.entry_point,
        "io_mode": p.io_mode.value,
        "ground_truth_tests": [test_to_record(t) for t in p.ground_truth_tests],
        "example_tests": [test_to_record(t) for t in p.example_tests],
    }
    if p.canonical_solution is not None:
        rec["canonical_solution"] = p.canonical_solution
    return rec


def problem_from_record(rec: dict, line_no: int) -> Problem:
    for key in ("id", "context", "entry_point"):
        if key not in rec:
            ident = rec.get("id", f"<line {line_no}>")
            raise CorpusError(f"problem {ident!r}: missing field {key!r}")
    problem = Problem(
        id=rec["id"],
        context=rec["context"],
        entry_point=rec["entry_point"],
        canonical_solution=rec.get("canonical_solution"),
        ground_truth_tests=tuple(
            test_from_record(t) for t in rec.get("ground_truth_tests", [])
        ),
        example_tests=tuple(test_from_record(t) for t in rec.get("example_tests", [])),
        io_mode=IoMode(rec.get("io_mode", "assertion")),
    )
    problem.validate()
    return problem


def assign_test_ids(tests: Iterable[TestCase], prefix: str) -> list[TestCase]:
    """Give every test a stable id of the form ``<prefix><index>`` if missing."""
    out = []
    for i, tc in enumerate(tests):
        out.append(tc if tc.id is not None else replace(tc, id=f"{prefix}{i}"))
    return out


def _read_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path.name}:{line_no}: invalid JSON: {exc}") from exc
            if not isinstance(rec, dict):
                raise CorpusError(f"{path.name}:{line_no}: expected a JSON object")
            yield line_no, rec


def load_corpus(path: str | Path, format: str = "jsonl") -> Corpus:
    """Load ``<name>.jsonl`` plus sibling candidate/test stores if present."""
    if format != "jsonl":
        raise CorpusError(f"unsupported corpus format {format!r}")
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    name = path.name.removesuffix(".jsonl")
    corpus = Corpus(name=name)
    seen: set[str] = set()
    for line_no, rec in _read_jsonl(path):
        problem = problem_from_record(rec, line_no)
        if problem.id in seen:
            raise CorpusError(f"duplicate problem id {problem.id!r} at line {line_no}")
        seen.add(problem.id)
        corpus.problems.append(problem)

    cand_path = path.with_name(f"{name}.candidates.jsonl")
    if cand_path.exists():
        for line_no, rec in _read_jsonl(cand_path):
            if "problem_id" not in rec:
                raise CorpusError(f"{cand_path.name}:{line_no}: missing problem_id")
            corpus.candidates.setdefault(rec["problem_id"], []).append(
                candidate_from_record(rec)
            )
        for pid, cands in corpus.candidates.items():
            ids = [c.id for c in cands]
            if len(ids) != len(set(ids)):
                raise CorpusError(f"problem {pid!r}: duplicate candidate ids")

    tests_path = path.with_name(f"{name}.tests.jsonl")
    if tests_path.exists():
        by_problem: dict[str, list[TestCase]] = {}
        for line_no, rec in _read_jsonl(tests_path):
            if "problem_id" not in rec:
                raise CorpusError(f"{tests_path.name}:{line_no}: missing problem_id")
            by_problem.setdefault(rec["problem_id"], []).append(test_from_record(rec))
        for pid, tests in by_problem.items():
            corpus.generated_tests[pid] = assign_test_ids(tests, "g")
    return corpus


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the corpus (and non-empty stores) in canonical JSONL form."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for p in corpus.problems:
            fh.write(_dump(problem_to_record(p)) + "\n")
    name = path.name.removesuffix(".jsonl")
    if corpus.candidates:
        with path.with_name(f"{name}.candidates.jsonl").open(
            "w", encoding="utf-8", newline="\n"
        ) as fh:
            for pid in sorted(corpus.candidates):
                for c in corpus.candidates[pid]:
                    rec = {"problem_id": pid, **candidate_to_record(c)}
                    fh.write(_dump(rec) + "\n")
    if corpus.generated_tests:
        with path.with_name(f"{name}.tests.jsonl").open(
            "w", encoding="utf-8", newline="\n"
        ) as fh:
            for pid in sorted(corpus.generated_tests):
                for tc in corpus.generated_tests[pid]:
                    rec = {"problem_id": pid, **test_to_record(tc)}
                    fh.write(_dump(rec) + "\n")


# --------------------------------------------------------------------------
# Context preprocessing
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExampleMatcher:
    """How example I/O blocks are delimited in one corpus's docstring style.

    ``doctest`` matches a prompt-marker line (the call) followed by one
    output line. ``stdio_block`` matches ``input_marker``/``output_marker``
    sections and converts them to stdin/stdout pairs.
    """

    kind: str = "doctest"
    prompt: str = ">>> "
    input_marker: str = "Input:"
    output_marker: str = "Output:"


DEFAULT_MATCHERS = (ExampleMatcher(kind="doctest"),)


def strip_examples(
    context: str,
    matchers: Iterable[ExampleMatcher] = DEFAULT_MATCHERS,
    entry_point: Optional[str] = None,
) -> tuple[str, list[TestCase]]:
    """Remove example I/O blocks from a context.

    Returns the stripped context and the examples that were mechanically
    convertible into test cases. Blocks that match but cannot be converted
    are removed and logged. Contexts without matches pass through unchanged.
    """
    stripped = context
    extracted: list[TestCase] = []
    for matcher in matchers:
        if matcher.kind == "doctest":
            stripped, found = _strip_doctest(stripped, matcher.prompt, entry_point)
        elif matcher.kind == "stdio_block":
            stripped, found = _strip_stdio_blocks(
                stripped, matcher.input_marker, matcher.output_marker
            )
        else:
            raise CorpusError(f"unknown example matcher kind {matcher.kind!r}")
        extracted.extend(found)
    return stripped, extracted


def _strip_doctest(
    context: str, prompt: str, entry_point: Optional[str]
) -> tuple[str, list[TestCase]]:
    lines = context.splitlines(keepends=True)
    kept: list[str] = []
    found: list[TestCase] = []
    i = 0
    while i < len(lines):
        line = lines[i]
        body = line.lstrip()
        if not body.startswith(prompt):
            kept.append(line)
            i += 1
            continue
        call = body[len(prompt):].strip()
        i += 1
        output = None
        # The next line, when present and not itself a prompt, is the
        # expected output of the call.
        if i < len(lines):
            nxt = lines[i].lstrip()
            if nxt.strip() and not nxt.startswith(prompt):
                output = lines[i].strip()
                i += 1
        tc = _doctest_to_test(call, output, entry_point)
        if tc is None:
            log.warning("dropping unconvertible example: %r => %r", call, output)
        else:
            found.append(tc)
    return "".join(kept), found


def _doctest_to_test(
    call: str, output: Optional[str], entry_point: Optional[str]
) -> Optional[TestCase]:
    if output is None:
        return None
    assertion = f"assert {call} == {output}"
    try:
        tree = ast.parse(assertion)
    except SyntaxError:
        return None
    if len(tree.body) != 1 or not isinstance(tree.body[0], ast.Assert):
        return None
    if entry_point and not contains_token(call, entry_point):
        return None
    return TestCase(
        kind=TestKind.ASSERTION, assertion=assertion, origin=TestOrigin.EXAMPLE
    )


def _strip_stdio_blocks(
    context: str, input_marker: str, output_marker: str
) -> tuple[str, list[TestCase]]:
    lines = context.splitlines(keepends=True)
    kept: list[str] = []
    found: list[TestCase] = []
    i = 0
    while i < len(lines):
        if lines[i].strip() != input_marker:
            kept.append(lines[i])
            i += 1
            continue
        i += 1
        stdin_lines: list[str] = []
        while i < len(lines) and lines[i].strip() != output_marker:
            stdin_lines.append(lines[i])
            i += 1
        if i >= len(lines):
            # Input with no Output section: drop the block, keep nothing.
            log.warning("dropping example input block without output section")
            break
        i += 1
        stdout_lines: list[str] = []
        while i < len(lines) and lines[i].strip():
            stdout_lines.append(lines[i])
            i += 1
        found.append(
            TestCase(
                kind=TestKind.STDIO,
                stdin="".join(stdin_lines),
                expected_stdout="".join(stdout_lines),
                origin=TestOrigin.EXAMPLE,
            )
        )
    return "".join(kept), found


def build_stdio_context(
    description: str,
    matchers: Iterable[ExampleMatcher] = (),
) -> str:
    """Render a problem description as a comment block over the stdio header.

    Every description line is prefixed as a comment so stray characters can
    never terminate the block; the function header is the final line.
    """
    text = description.replace("\r\n", "\n").replace("\r", "\n")
    if matchers:
        text, _ = strip_examples(text, matchers)
    lines = text.split("\n")
    while lines and not lines[-1].strip():
        lines.pop()
    commented = [f"# {ln}".rstrip() for ln in lines]
    if commented:
        return "\n".join(commented) + "\n" + STDIO_HEADER + "\n"
    return STDIO_HEADER + "\n"
