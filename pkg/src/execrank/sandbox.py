"""Isolated execution of (candidate, test) pairs into verdict matrices.

Two backends implement the same surface:

* ``shim`` — spawns worker processes running the standalone runner script
  and speaks the newline-delimited JSON line protocol below. Workers are
  persistent per parallel lane; state never leaks between cells because the
  worker rebuilds a scrubbed namespace per request, and the parent enforces
  a hard kill past the timeout budget.
* ``fake_table`` — answers every cell from a preloaded verdict table and
  never spawns anything. This makes every downstream module testable with
  no worker built.

Worker line protocol (bit-exact, one JSON object per line):

  request  {"cmd": "exec"|"parse"|"reset", "solution": str, "test": str,
            "timeout_ms": int, "io_mode": "assertion"|"stdio", "stdin": str?}
  response {"outcome": "pass"|"assertion_failed"|"runtime_error"|"timeout"|
            "syntax_error"|"wrong_stdout", "wall_ms": number, "detail": str?}

For ``exec`` in assertion mode the worker executes ``solution`` then
``test`` in a fresh namespace. In stdio mode it calls ``solution(stdin)``
and compares produced stdout against ``test`` (the expected output) after
trailing-whitespace normalization; ``detail`` carries the produced output
on mismatch or timeout. ``parse`` compiles ``solution`` without executing.
"""

from __future__ import annotations

import ast
import json
import os
import queue
import subprocess
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from .corpus import Candidate, IoMode, Problem, TestCase, TestKind

# Parent-side grace on top of the per-test timeout before a worker is
# presumed wedged and killed.
SUPERVISION_SLACK_S = 0.2
ERROR_MARKER = "!error"
TIMEOUT_MARKER = "!timeout"


class SandboxError(RuntimeError):
    """Backend could not be spawned or answered out of protocol."""


class Outcome(str, Enum):
    PASS = "pass"
    ASSERTION_FAILED = "assertion_failed"
    RUNTIME_ERROR = "runtime_error"
    TIMEOUT = "timeout"
    SYNTAX_ERROR = "syntax_error"
    WRONG_STDOUT = "wrong_stdout"


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    wall_time: float = 0.0
    detail: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.outcome is Outcome.PASS


@dataclass
class ExecutionMatrix:
    """Dense verdict table for every (candidate, test) pair of one problem."""

    problem_id: str
    candidate_ids: list[str]
    test_ids: list[str]
    verdicts: list[list[Verdict]]

    def verdict(self, candidate_id: str, test_id: str) -> Verdict:
        i = self.candidate_ids.index(candidate_id)
        j = self.test_ids.index(test_id)
        return self.verdicts[i][j]

    def row(self, candidate_id: str) -> list[Verdict]:
        return self.verdicts[self.candidate_ids.index(candidate_id)]

    def pass_set(self, candidate_id: str) -> frozenset[str]:
        row = self.row(candidate_id)
        return frozenset(
            tid for tid, v in zip(self.test_ids, row) if v.passed
        )

    def restrict(
        self,
        candidate_ids: Optional[Sequence[str]] = None,
        test_ids: Optional[Sequence[str]] = None,
    ) -> "ExecutionMatrix":
        """Sub-matrix over the given ids, preserving order."""
        cids = list(candidate_ids) if candidate_ids is not None else self.candidate_ids
        tids = list(test_ids) if test_ids is not None else self.test_ids
        rows = [self.candidate_ids.index(c) for c in cids]
        cols = [self.test_ids.index(t) for t in tids]
        return ExecutionMatrix(
            problem_id=self.problem_id,
            candidate_ids=cids,
            test_ids=tids,
            verdicts=[[self.verdicts[i][j] for j in cols] for i in rows],
        )


class Backend(str, Enum):
    SHIM = "shim"
    FAKE_TABLE = "fake_table"


@dataclass
class ExecPolicy:
    timeout_per_test: float = 0.1
    max_parallel_workers: int = 4
    memory_limit: Optional[int] = None
    backend: Backend = Backend.SHIM

    def __post_init__(self) -> None:
        if self.timeout_per_test <= 0:
            raise ValueError("timeout_per_test must be positive")
        if self.max_parallel_workers < 1:
            raise ValueError("max_parallel_workers must be >= 1")


def parse_ok(snippet: str) -> bool:
    """In-process syntax check: does the snippet parse as a module?

    Compilation only; nothing is executed. This is the default predicate
    for the fake backend and for assertion extraction.
    """
    try:
        compile(snippet, "<snippet>", "exec")
    except (SyntaxError, ValueError):
        return False
    return True


def compose_solution(problem: Problem, body: str) -> str:
    """Join a problem context with a sampled completion into runnable source."""
    context = problem.context
    if context and not context.endswith("\n"):
        context += "\n"
    src = context + body
    if not src.endswith("\n"):
        src += "\n"
    return src


def probe_test(call_expr: str) -> str:
    """Assertion-mode test whose failure detail carries ``repr`` of the call.

    Used for output capture (behavior clustering, trivial-solution probes)
    through the unchanged line protocol: the verdict comes back as
    ``assertion_failed`` and ``detail`` holds the value.
    """
    return f"__probe_value__ = ({call_expr})\nraise AssertionError(repr(__probe_value__))"


# --------------------------------------------------------------------------
# Fake-table backend
# --------------------------------------------------------------------------

@dataclass
class FakeTableBackend:
    """Preloaded verdicts keyed by (problem_id, solution_id, test_id).

    ``outputs`` optionally preloads behavior-capture results keyed by
    (problem_id, solution_id, input source). ``syntax_predicate`` answers
    syntax checks; the default parses in-process.
    """

    table: dict[tuple[str, str, str], Verdict] = field(default_factory=dict)
    outputs: dict[tuple[str, str, str], str] = field(default_factory=dict)
    syntax_predicate: Callable[[str], bool] = parse_ok

    def load(self, path: str | Path) -> "FakeTableBackend":
        """Load verdicts from matrix JSONL (dense records or flat cells)."""
        path = Path(path)
        with path.open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if "_manifest_hash" in rec and "problem_id" not in rec:
                    continue
                if "verdicts" in rec:
                    self._load_dense(rec)
                elif "output" in rec:
                    self.outputs[
                        (rec["problem_id"], rec["solution_id"], rec["input"])
                    ] = rec["output"]
                else:
                    self.table[
                        (rec["problem_id"], rec["solution_id"], rec["test_id"])
                    ] = Verdict(
                        outcome=Outcome(rec["outcome"]),
                        wall_time=float(rec.get("wall_time", 0.0)),
                        detail=rec.get("detail"),
                    )
        return self

    def _load_dense(self, rec: dict) -> None:
        pid = rec["problem_id"]
        sids = rec.get("solution_ids", rec.get("candidate_ids"))
        for sid, row in zip(sids, rec["verdicts"]):
            for tid, cell in zip(rec["test_ids"], row):
                self.table[(pid, sid, tid)] = Verdict(
                    outcome=Outcome(cell["outcome"]),
                    wall_time=float(cell.get("wall_time", 0.0)),
                    detail=cell.get("detail"),
                )

    def execute_cell(
        self, problem_id: str, solution_id: str, test: TestCase
    ) -> Verdict:
        key = (problem_id, solution_id, test.id or "")
        try:
            return self.table[key]
        except KeyError:
            raise SandboxError(
                f"fake table has no verdict for problem={problem_id!r} "
                f"solution={solution_id!r} test={test.id!r}"
            ) from None

    def capture_output(self, problem_id: str, solution_id: str, source: str) -> str:
        try:
            return self.outputs[(problem_id, solution_id, source)]
        except KeyError:
            raise SandboxError(
                f"fake table has no output for problem={problem_id!r} "
                f"solution={solution_id!r} input={source!r}"
            ) from None

    def syntax_check(self, snippet: str) -> bool:
        return self.syntax_predicate(snippet)

    def close(self) -> None:
        pass


# --------------------------------------------------------------------------
# Shim backend
# --------------------------------------------------------------------------

class _Worker:
    """One persistent worker process speaking the line protocol."""

    def __init__(self, cmd: Sequence[str], memory_limit: Optional[int]):
        self._cmd = list(cmd)
        self._memory_limit = memory_limit
        self._proc: Optional[subprocess.Popen] = None
        self._spawn()

    def _spawn(self) -> None:
        preexec = None
        if self._memory_limit is not None and os.name == "posix":
            limit = self._memory_limit

            def preexec() -> None:  # pragma: no cover - runs in the child
                import resource

                resource.setrlimit(resource.RLIMIT_AS, (limit, limit))

        try:
            self._proc = subprocess.Popen(
                self._cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                preexec_fn=preexec,
            )
        except OSError as exc:
            raise SandboxError(f"cannot spawn worker {self._cmd!r}: {exc}") from exc

    def request(self, req: dict, deadline_s: float) -> dict:
        """Send one request; on a wedged or dead worker, kill and respawn."""
        assert self._proc is not None
        line = json.dumps(req, ensure_ascii=False)
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            self._restart()
            return {"outcome": "runtime_error", "wall_ms": 0, "detail": "worker died"}

        result: dict = {}

        def read() -> None:
            out = self._proc.stdout.readline()
            if out:
                try:
                    result.update(json.loads(out))
                except json.JSONDecodeError:
                    result.update(
                        {"outcome": "runtime_error", "wall_ms": 0, "detail": "protocol"}
                    )

        reader = threading.Thread(target=read, daemon=True)
        reader.start()
        reader.join(deadline_s)
        if reader.is_alive() or not result:
            self._restart()
            if reader.is_alive():
                return {"outcome": "timeout", "wall_ms": int(deadline_s * 1000)}
            return {"outcome": "runtime_error", "wall_ms": 0, "detail": "worker died"}
        return result

    def _restart(self) -> None:
        self.close()
        self._spawn()

    def close(self) -> None:
        if self._proc is None:
            return
        try:
            self._proc.kill()
            self._proc.wait(timeout=5)
        except OSError:
            pass
        self._proc = None


class ShimBackend:
    """Pool of line-protocol workers, one lane per parallel slot.

    Checkout blocks when more threads than lanes ask at once, so callers
    may fan out as wide as they like.
    """

    def __init__(
        self,
        shim_path: str | Path,
        lanes: int = 4,
        memory_limit: Optional[int] = None,
        python: Optional[str] = None,
    ):
        shim_path = Path(shim_path)
        if not shim_path.exists():
            raise SandboxError(f"runner shim not found: {shim_path}")
        self._cmd = [python or sys.executable, str(shim_path)]
        self._memory_limit = memory_limit
        self._lanes = [
            _Worker(self._cmd, memory_limit) for _ in range(max(1, lanes))
        ]
        self._free: queue.Queue[_Worker] = queue.Queue()
        for worker in self._lanes:
            self._free.put(worker)

    def _checkout(self) -> _Worker:
        return self._free.get()

    def _checkin(self, worker: _Worker) -> None:
        self._free.put(worker)

    def _roundtrip(self, req: dict, timeout_s: float) -> dict:
        worker = self._checkout()
        try:
            return worker.request(req, timeout_s + SUPERVISION_SLACK_S)
        finally:
            self._checkin(worker)

    def exec_request(
        self,
        solution: str,
        test: str,
        timeout_s: float,
        io_mode: IoMode,
        stdin: Optional[str] = None,
    ) -> Verdict:
        req = {
            "cmd": "exec",
            "solution": solution,
            "test": test,
            "timeout_ms": int(round(timeout_s * 1000)),
            "io_mode": io_mode.value,
        }
        if stdin is not None:
            req["stdin"] = stdin
        resp = self._roundtrip(req, timeout_s)
        return Verdict(
            outcome=Outcome(resp.get("outcome", "runtime_error")),
            wall_time=float(resp.get("wall_ms", 0)) / 1000.0,
            detail=resp.get("detail"),
        )

    def syntax_check(self, snippet: str) -> bool:
        resp = self._roundtrip(
            {
                "cmd": "parse",
                "solution": snippet,
                "test": "",
                "timeout_ms": 5000,
                "io_mode": "assertion",
            },
            5.0,
        )
        return resp.get("outcome") == "pass"

    def close(self) -> None:
        for worker in self._lanes:
            worker.close()


# --------------------------------------------------------------------------
# Matrix construction
# --------------------------------------------------------------------------

def _cell_request(
    problem: Problem, solution_src: str, test: TestCase
) -> tuple[str, Optional[str]]:
    if test.kind is TestKind.STDIO:
        return test.expected_stdout or "", test.stdin or ""
    return test.assertion or "", None


def execute_matrix(
    problem: Problem,
    candidates: Sequence[Candidate],
    tests: Sequence[TestCase],
    policy: ExecPolicy,
    backend: FakeTableBackend | ShimBackend,
    solution_sources: Optional[dict[str, str]] = None,
) -> ExecutionMatrix:
    """Evaluate every (candidate, test) pair exactly once.

    Cells are fanned out across the worker lanes and collected by index, so
    completion order never affects the result. ``solution_sources`` lets the
    caller override the composed source per candidate id (used for the
    canonical solution row).
    """
    for tc in tests:
        expected = TestKind.STDIO if problem.io_mode is IoMode.STDIO else TestKind.ASSERTION
        if tc.kind is not expected:
            raise SandboxError(
                f"test {tc.id!r} kind {tc.kind.value} does not match "
                f"problem io_mode {problem.io_mode.value}"
            )
    matrix = ExecutionMatrix(
        problem_id=problem.id,
        candidate_ids=[c.id for c in candidates],
        test_ids=[tc.id or f"g{j}" for j, tc in enumerate(tests)],
        verdicts=[[Verdict(Outcome.RUNTIME_ERROR)] * len(tests) for _ in candidates],
    )
    if not candidates or not tests:
        matrix.verdicts = [[] for _ in candidates]
        return matrix

    if isinstance(backend, FakeTableBackend):
        matrix.verdicts = [
            [backend.execute_cell(problem.id, c.id, tc) for tc in tests]
            for c in candidates
        ]
        return matrix

    sources = {
        c.id: (solution_sources or {}).get(c.id, compose_solution(problem, c.body))
        for c in candidates
    }

    def run_cell(cell: tuple[int, int]) -> None:
        i, j = cell
        test_payload, stdin = _cell_request(problem, sources[candidates[i].id], tests[j])
        matrix.verdicts[i][j] = backend.exec_request(
            sources[candidates[i].id],
            test_payload,
            policy.timeout_per_test,
            problem.io_mode,
            stdin=stdin,
        )

    cells = [(i, j) for i in range(len(candidates)) for j in range(len(tests))]
    workers = min(policy.max_parallel_workers, len(cells))
    if workers <= 1:
        for cell in cells:
            run_cell(cell)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_cell, cells))
    return matrix


def syntax_check(snippet: str, backend: FakeTableBackend | ShimBackend) -> bool:
    """True iff the snippet parses as a complete statement/module."""
    return backend.syntax_check(snippet)


def capture_outputs(
    problem: Problem,
    candidates: Sequence[Candidate],
    inputs: Sequence[str],
    policy: ExecPolicy,
    backend: FakeTableBackend | ShimBackend,
) -> dict[str, tuple[str, ...]]:
    """Run every candidate on every input, returning output tuples.

    ``inputs`` are call expressions for assertion-mode problems and stdin
    texts for stdio problems. Failures map to stable error markers so that
    identical misbehavior still clusters together.
    """
    result: dict[str, tuple[str, ...]] = {}
    if isinstance(backend, FakeTableBackend):
        for c in candidates:
            result[c.id] = tuple(
                backend.capture_output(problem.id, c.id, src) for src in inputs
            )
        return result

    for c in candidates:
        source = compose_solution(problem, c.body)
        outputs: list[str] = []
        for src in inputs:
            if problem.io_mode is IoMode.STDIO:
                # Sentinel expected output forces wrong_stdout whose detail
                # carries the produced text.
                verdict = backend.exec_request(
                    source, "\x00unmatchable\x00", policy.timeout_per_test,
                    IoMode.STDIO, stdin=src,
                )
                if verdict.outcome is Outcome.WRONG_STDOUT:
                    outputs.append(verdict.detail or "")
                elif verdict.outcome is Outcome.TIMEOUT:
                    outputs.append(TIMEOUT_MARKER)
                else:
                    outputs.append(ERROR_MARKER)
            else:
                verdict = backend.exec_request(
                    source, probe_test(src), policy.timeout_per_test, IoMode.ASSERTION
                )
                if verdict.outcome is Outcome.ASSERTION_FAILED:
                    outputs.append(verdict.detail or "")
                elif verdict.outcome is Outcome.TIMEOUT:
                    outputs.append(TIMEOUT_MARKER)
                else:
                    outputs.append(ERROR_MARKER)
        result[c.id] = tuple(outputs)
    return result


def extract_call_inputs(
    tests: Iterable[TestCase], entry_point: str, limit: Optional[int] = None
) -> list[str]:
    """Pull distinct entry-point call expressions out of generated tests.

    These are the behavior-clustering inputs; expected outputs are ignored.
    For stdio tests the stdin text itself is the input.
    """
    seen: list[str] = []
    for tc in tests:
        if tc.kind is TestKind.STDIO:
            src = tc.stdin or ""
            if src not in seen:
                seen.append(src)
        elif tc.assertion:
            try:
                tree = ast.parse(tc.assertion)
            except SyntaxError:
                continue
            for node in ast.walk(tree):
                if (
                    isinstance(node, ast.Call)
                    and isinstance(node.func, ast.Name)
                    and node.func.id == entry_point
                ):
                    src = ast.unparse(node)
                    if src not in seen:
                        seen.append(src)
                    break
        if limit is not None and len(seen) >= limit:
            break
    return seen


# --------------------------------------------------------------------------
# Matrix JSONL
# --------------------------------------------------------------------------

def matrix_to_record(matrix: ExecutionMatrix, kind: str = "generated") -> dict:
    return {
        "problem_id": matrix.problem_id,
        "kind": kind,
        "solution_ids": list(matrix.candidate_ids),
        "test_ids": list(matrix.test_ids),
        "verdicts": [
            [
                {
                    "outcome": v.outcome.value,
                    "wall_time": v.wall_time,
                    **({"detail": v.detail} if v.detail is not None else {}),
                }
                for v in row
            ]
            for row in matrix.verdicts
        ],
    }


def matrix_from_record(rec: dict) -> ExecutionMatrix:
    return ExecutionMatrix(
        problem_id=rec["problem_id"],
        candidate_ids=list(rec.get("solution_ids", rec.get("candidate_ids"))),
        test_ids=list(rec["test_ids"]),
        verdicts=[
            [
                Verdict(
                    outcome=Outcome(cell["outcome"]),
                    wall_time=float(cell.get("wall_time", 0.0)),
                    detail=cell.get("detail"),
                )
                for cell in row
            ]
            for row in rec["verdicts"]
        ],
    )
