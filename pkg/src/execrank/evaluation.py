"""Metrics and ablations: pass@k, test quality, filters, report assembly.

The unbiased pass@k estimator models drawing k of n samples at random;
ranked pass@k judges the ids a ranker actually chose against ground-truth
verdicts. Test quality scores generated tests against the canonical
solution (accuracy) and flags tests that mislead ranking (toxicity).
"""

from __future__ import annotations

import ast
import statistics
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .consensus import ConsensusSet, RankedSelection
from .corpus import Candidate, Problem, TestCase, TestKind
from .sandbox import (
    ERROR_MARKER,
    TIMEOUT_MARKER,
    ExecPolicy,
    ExecutionMatrix,
    FakeTableBackend,
    ShimBackend,
    capture_outputs,
    compose_solution,
    execute_matrix,
)

CANONICAL_ID = "canonical"


class PassAtKMode(str, Enum):
    UNBIASED_BASELINE = "unbiased_baseline"
    RANKED_SELECTION = "ranked_selection"


@dataclass(frozen=True)
class PassAtK:
    k: int
    value: float
    mode: PassAtKMode

    def __post_init__(self) -> None:
        if not (0.0 <= self.value <= 1.0):
            raise ValueError("pass@k value must be in [0, 1]")


@dataclass(frozen=True)
class TestQuality:
    accuracy: Optional[float]
    toxicity_rate: Optional[float]


# --------------------------------------------------------------------------
# pass@k
# --------------------------------------------------------------------------

def pass_at_k_unbiased(n: int, c: int, k: int) -> float:
    """Probability that k of n randomly drawn samples include a correct one.

    Computed as 1 - C(n-c, k)/C(n, k) in product form, stable for n well
    past 10^4 (no factorials).
    """
    if not 0 <= c <= n:
        raise ValueError(f"need 0 <= c <= n, got c={c} n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k} n={n}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    miss = 1.0
    for i in range(k):
        miss *= (n - c - i) / (n - i)
    return 1.0 - miss


def correct_candidate_ids(judge_matrix: ExecutionMatrix) -> frozenset[str]:
    """Candidates passing every ground-truth test."""
    return frozenset(
        cid
        for cid in judge_matrix.candidate_ids
        if len(judge_matrix.pass_set(cid)) == len(judge_matrix.test_ids)
    )


def solved_at_k(
    selection: RankedSelection, correct: frozenset[str], k: int
) -> bool:
    """A problem counts as solved iff any of the first k chosen is correct."""
    if len(selection.chosen) < k:
        if selection.chosen:
            raise ValueError(
                f"selection has {len(selection.chosen)} picks, need k={k}"
            )
        return False  # nothing survived filtering; unsolved by definition
    return any(cid in correct for cid in selection.chosen[:k])


def pass_at_k_ranked(
    selections: Mapping[str, RankedSelection],
    correct_by_problem: Mapping[str, frozenset[str]],
    k: int,
) -> float:
    """Mean over problems of the 0/1 ranked pass@k outcome."""
    if not selections:
        raise ValueError("no selections to evaluate")
    missing = [pid for pid in selections if pid not in correct_by_problem]
    if missing:
        raise ValueError(f"missing ground-truth verdicts for problems {missing}")
    hits = sum(
        solved_at_k(sel, correct_by_problem[pid], k)
        for pid, sel in selections.items()
    )
    return hits / len(selections)


# --------------------------------------------------------------------------
# Test quality
# --------------------------------------------------------------------------

def test_quality(
    problem: Problem,
    generated_tests: Sequence[TestCase],
    candidates: Sequence[Candidate],
    policy: ExecPolicy,
    backend: FakeTableBackend | ShimBackend,
    candidate_matrix: Optional[ExecutionMatrix] = None,
) -> TestQuality:
    """Accuracy and toxicity of generated tests for one problem.

    Accuracy is the fraction the canonical solution passes; absent without
    a canonical solution or without generated tests. A test is toxic when
    the canonical solution fails it yet some candidate passes it.
    """
    if problem.canonical_solution is None or not generated_tests:
        return TestQuality(accuracy=None, toxicity_rate=None)
    canonical = Candidate(id=CANONICAL_ID, body=problem.canonical_solution, sample_index=-1)
    canonical_matrix = execute_matrix(
        problem, [canonical], generated_tests, policy, backend,
        solution_sources={CANONICAL_ID: compose_solution(problem, problem.canonical_solution)},
    )
    canonical_passes = canonical_matrix.pass_set(CANONICAL_ID)
    accuracy = len(canonical_passes) / len(generated_tests)
    if not candidates:
        return TestQuality(accuracy=accuracy, toxicity_rate=None)
    if candidate_matrix is None:
        candidate_matrix = execute_matrix(
            problem, candidates, generated_tests, policy, backend
        )
    toxic = 0
    for j, tc in enumerate(generated_tests):
        tid = tc.id or f"g{j}"
        if tid in canonical_passes:
            continue
        if any(
            candidate_matrix.verdicts[i][candidate_matrix.test_ids.index(tid)].passed
            for i in range(len(candidate_matrix.candidate_ids))
        ):
            toxic += 1
    return TestQuality(accuracy=accuracy, toxicity_rate=toxic / len(generated_tests))


# --------------------------------------------------------------------------
# Candidate filters
# --------------------------------------------------------------------------

DEFAULT_PROBES = ("0", "1", "'a'")


def probe_inputs_from_tests(
    tests: Iterable[TestCase], entry_point: str, cap: int = 8
) -> list[str]:
    """Entry-point call expressions harvested from generated tests.

    Falls back to a small default probe set when fewer than two distinct
    calls can be parsed out.
    """
    from .sandbox import extract_call_inputs

    calls = extract_call_inputs(tests, entry_point, limit=cap)
    if len(calls) >= 2:
        return calls
    return [f"{entry_point}({p})" for p in DEFAULT_PROBES]


def _probe_argument(call_src: str) -> Optional[str]:
    """repr of the single argument of a probe call, if that is its shape."""
    try:
        tree = ast.parse(call_src, mode="eval")
    except SyntaxError:
        return None
    node = tree.body
    if isinstance(node, ast.Call) and len(node.args) == 1 and not node.keywords:
        try:
            return repr(ast.literal_eval(node.args[0]))
        except (ValueError, SyntaxError):
            return None
    return None


def trivial_from_outputs(
    outputs: Sequence[str], probes: Sequence[str], stdio: bool = False
) -> bool:
    """Judge constant/identity behavior from captured probe outputs.

    Any erroring or timing-out probe disqualifies both claims.
    """
    if len(outputs) < 2:
        return False
    if any(o in (ERROR_MARKER, TIMEOUT_MARKER) for o in outputs):
        return False
    if len(set(outputs)) == 1:
        return True
    if stdio:
        return all(out == probe for out, probe in zip(outputs, probes))
    args = [_probe_argument(src) for src in probes]
    return all(a is not None for a in args) and all(
        out == arg for out, arg in zip(outputs, args)
    )


def detect_trivial(
    problem: Problem,
    candidate: Candidate,
    probe_inputs: Sequence[str],
    policy: ExecPolicy,
    backend: FakeTableBackend | ShimBackend,
) -> bool:
    """True when a candidate returns a constant or echoes its input.

    Requires at least two distinct probes.
    """
    from .corpus import IoMode

    probes = list(dict.fromkeys(probe_inputs))
    if len(probes) < 2:
        raise ValueError("detect_trivial needs >= 2 distinct probe inputs")
    outputs = capture_outputs(problem, [candidate], probes, policy, backend)[
        candidate.id
    ]
    return trivial_from_outputs(outputs, probes, stdio=problem.io_mode is IoMode.STDIO)


def filter_trivial(
    problem: Problem,
    candidates: Sequence[Candidate],
    generated_tests: Sequence[TestCase],
    policy: ExecPolicy,
    backend: FakeTableBackend | ShimBackend,
) -> list[Candidate]:
    """Drop candidates whose probed behavior is constant or identity."""
    probes = probe_inputs_from_tests(generated_tests, problem.entry_point)
    kept = []
    for c in candidates:
        try:
            trivial = detect_trivial(problem, c, probes, policy, backend)
        except ValueError:
            trivial = False
        if not trivial:
            kept.append(c)
    return kept


def normalize_style(snippet: str) -> str:
    """Canonical style normalization via an AST round-trip.

    Whitespace, quoting, and redundant parentheses are canonicalized;
    snippets that do not parse come back unchanged. Function bodies are
    wrapped so indented fragments normalize too.
    """
    try:
        return ast.unparse(ast.parse(snippet))
    except (SyntaxError, ValueError):
        pass
    # Indented completion fragment: normalize inside a dummy enclosure.
    wrapped = "if True:\n" + "\n".join(
        "    " + ln for ln in snippet.split("\n")
    )
    try:
        out = ast.unparse(ast.parse(wrapped))
    except (SyntaxError, ValueError):
        return snippet
    lines = out.split("\n")
    return "\n".join(ln.removeprefix("    ") for ln in lines[1:])


def deduplicate(
    candidates: Sequence[Candidate],
    tests: Sequence[TestCase],
    dedup_solutions: bool = False,
    dedup_tests: bool = False,
    normalizer: Callable[[str], str] = normalize_style,
) -> tuple[list[Candidate], list[TestCase]]:
    """Remove exact duplicates of normalized bodies, first occurrence kept.

    With neither flag set the inputs come back unchanged (the default
    main-experiment setting). Normalizer failures degrade to exact string
    matching with a warning.
    """
    out_candidates = list(candidates)
    out_tests = list(tests)
    if dedup_solutions:
        seen: set[str] = set()
        out_candidates = []
        for c in candidates:
            try:
                norm = c.normalized_body or normalizer(c.body)
            except Exception:  # degraded mode: formatter unavailable/broken
                warnings.warn("style normalizer failed; falling back to exact match")
                norm = c.body
            if norm in seen:
                continue
            seen.add(norm)
            out_candidates.append(c)
    if dedup_tests:
        seen = set()
        out_tests = []
        for tc in tests:
            key = tc.assertion if tc.kind is TestKind.ASSERTION else (
                f"{tc.stdin!r}=>{tc.expected_stdout!r}"
            )
            try:
                norm = normalizer(key) if tc.kind is TestKind.ASSERTION else key
            except Exception:
                warnings.warn("style normalizer failed; falling back to exact match")
                norm = key
            if norm in seen:
                continue
            seen.add(norm)
            out_tests.append(tc)
    return out_candidates, out_tests


def filter_by_examples(
    problem: Problem,
    candidates: Sequence[Candidate],
    policy: ExecPolicy,
    backend: FakeTableBackend | ShimBackend,
    example_matrix: Optional[ExecutionMatrix] = None,
) -> list[Candidate]:
    """Keep only candidates passing all example tests; identity when none."""
    if not problem.example_tests:
        return list(candidates)
    if example_matrix is None:
        example_matrix = execute_matrix(
            problem, candidates, list(problem.example_tests), policy, backend
        )
    kept = []
    for c in candidates:
        if len(example_matrix.pass_set(c.id)) == len(example_matrix.test_ids):
            kept.append(c)
    return kept


# --------------------------------------------------------------------------
# Distribution summaries
# --------------------------------------------------------------------------

def consensus_stats(
    sets_per_problem: Mapping[str, Sequence[ConsensusSet]]
) -> dict:
    """Per-problem set counts and top-set sizes with aggregate summaries."""
    per_problem = {}
    counts = []
    top_sizes = []
    for pid, sets in sets_per_problem.items():
        count = len(sets)
        top = len(sets[0].solutions) if sets else 0
        per_problem[pid] = {"set_count": count, "top_set_size": top}
        counts.append(count)
        top_sizes.append(top)
    summary = {}
    if counts:
        summary = {
            "set_count_mean": statistics.mean(counts),
            "set_count_median": statistics.median(counts),
            "top_set_size_mean": statistics.mean(top_sizes),
            "top_set_size_median": statistics.median(top_sizes),
        }
    return {"per_problem": per_problem, "aggregate": summary}
