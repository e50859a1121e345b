"""Shared paths and matrix-building helpers for the test suite."""

from __future__ import annotations

from pathlib import Path

import pytest

from execrank.sandbox import ExecutionMatrix, Outcome, Verdict

REPO_ROOT = Path(__file__).resolve().parents[1]
FIXTURES = REPO_ROOT / "fixtures"
TOY_CORPUS = FIXTURES / "toy" / "toy.jsonl"
TOY_REPLAY = FIXTURES / "toy" / "replay"
TOY_TABLE = FIXTURES / "toy" / "fake_table.jsonl"
SYN_CORPUS = FIXTURES / "synthetic20" / "synthetic20.jsonl"
SYN_REPLAY = FIXTURES / "synthetic20" / "replay"
SYN_TABLE = FIXTURES / "synthetic20" / "fake_table.jsonl"
SHIM_SCRIPT = REPO_ROOT / "shim" / "runner_shim.py"


def make_matrix(
    candidate_ids: list[str],
    test_ids: list[str],
    passes: dict[str, set[str]],
    problem_id: str = "p0",
) -> ExecutionMatrix:
    """Dense matrix where ``passes[cid]`` is the set of test ids cid passes."""
    return ExecutionMatrix(
        problem_id=problem_id,
        candidate_ids=list(candidate_ids),
        test_ids=list(test_ids),
        verdicts=[
            [
                Verdict(Outcome.PASS if tid in passes.get(cid, set()) else Outcome.ASSERTION_FAILED)
                for tid in test_ids
            ]
            for cid in candidate_ids
        ],
    )


@pytest.fixture
def worked_example_matrix() -> ExecutionMatrix:
    """The worked 3-solution, 5-test example: two agreement groups."""
    return make_matrix(
        ["x1", "x2", "x3"],
        ["y1", "y2", "y3", "y4", "y5"],
        {
            "x1": {"y1", "y2", "y3"},
            "x2": {"y1", "y2", "y3"},
            "x3": {"y2", "y3", "y4", "y5"},
        },
    )
