"""Agreement grouping, consensus-set scoring, and top-k selection.

Candidates that pass exactly the same tests form one group; a group
crossed with its common pass-set is a consensus set, scored by the sizes
of both sides. Two routes produce the sets: exhaustive grouping over the
full matrix, and an iterative sampler that seeds sets from randomly drawn
passing (solution, test) pairs. With enough iterations the sampler
recovers exactly the groups with a non-empty pass-set.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping, Optional, Sequence

from .sandbox import ExecutionMatrix


class Scoring(str, Enum):
    DUAL = "dual"
    SOLUTIONS_ONLY = "solutions_only"
    TESTS_ONLY = "tests_only"
    ALPHACODE_CLUSTER = "alphacode_cluster"
    RANDOM = "random"


class TieBreak(str, Enum):
    LARGER_TESTS_FIRST = "larger_tests_first"
    LEXICOGRAPHIC_ID = "lexicographic_id"


@dataclass(frozen=True)
class ConsensusSet:
    """Solutions with identical pass-sets, crossed with those tests."""

    solutions: frozenset[str]
    tests: frozenset[str]
    score: float = 0.0

    def min_id(self) -> str:
        return min(self.solutions) if self.solutions else ""


@dataclass(frozen=True)
class RankerConfig:
    scoring: Scoring = Scoring.DUAL
    # Exponent on the solution-group size; 0.5 dampens solution counts,
    # 1.0 gives the plain product of both set sizes.
    alpha: float = 0.5
    tie_break: TieBreak = TieBreak.LARGER_TESTS_FIRST
    seed: int = 0

    def __post_init__(self) -> None:
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")


@dataclass(frozen=True)
class RankedSelection:
    sets: tuple[ConsensusSet, ...]
    chosen: tuple[str, ...]


def derive_seed(seed: int, *parts: str) -> int:
    """Stable per-problem seed derivation, independent of process state."""
    digest = hashlib.sha256((":".join([str(seed), *parts])).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


# --------------------------------------------------------------------------
# Grouping and scoring
# --------------------------------------------------------------------------

def group_by_functionality(matrix: ExecutionMatrix) -> list[ConsensusSet]:
    """Partition candidates by identical pass-sets over all tests.

    Every candidate lands in exactly one group; groups whose members pass
    nothing have an empty test set. Output order is canonical (smallest
    member id), independent of matrix row order.
    """
    groups: dict[frozenset[str], set[str]] = {}
    for cid in matrix.candidate_ids:
        groups.setdefault(matrix.pass_set(cid), set()).add(cid)
    sets = [
        ConsensusSet(solutions=frozenset(members), tests=pass_set)
        for pass_set, members in groups.items()
    ]
    sets.sort(key=lambda s: s.min_id())
    return sets


def raw_score(s: ConsensusSet, scoring: Scoring, alpha: float) -> float:
    if scoring is Scoring.SOLUTIONS_ONLY:
        return float(len(s.solutions))
    if scoring is Scoring.TESTS_ONLY:
        return float(len(s.tests))
    return len(s.solutions) ** alpha * len(s.tests)


def score_sets(
    sets: Sequence[ConsensusSet], cfg: RankerConfig
) -> list[ConsensusSet]:
    """Score and order consensus sets, highest first.

    Zero-score sets under dual/tests-only scoring (those passing no tests)
    rank after every positive set, larger solution groups first. Remaining
    ties follow the configured tie break, then the smallest member id.
    """
    if cfg.scoring is Scoring.RANDOM:
        rng = random.Random(cfg.seed)
        scored = [replace(s, score=rng.random()) for s in sets]
    else:
        scored = [replace(s, score=raw_score(s, cfg.scoring, cfg.alpha)) for s in sets]

    def key(s: ConsensusSet):
        if cfg.scoring in (Scoring.DUAL, Scoring.TESTS_ONLY) and s.score == 0.0:
            return (1, 0.0, -len(s.solutions), s.min_id())
        tests_rank = (
            -len(s.tests) if cfg.tie_break is TieBreak.LARGER_TESTS_FIRST else 0
        )
        return (0, -s.score, tests_rank, s.min_id())

    return sorted(scored, key=key)


def select_top_k(
    ordered: Sequence[ConsensusSet], k: int, seed: int = 0
) -> RankedSelection:
    """Pick k candidate ids by cycling through the ranked sets.

    Pick i comes from the set at rank (i mod number-of-sets); within a set
    the member is drawn seeded-uniformly without repetition until the set
    is exhausted, then the pool refills.
    """
    if not ordered:
        raise ValueError("select_top_k requires at least one consensus set")
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = random.Random(seed)
    pools: list[list[str]] = [[] for _ in ordered]
    chosen: list[str] = []
    for i in range(k):
        idx = i % len(ordered)
        if not pools[idx]:
            pools[idx] = sorted(ordered[idx].solutions)
        pick = pools[idx].pop(rng.randrange(len(pools[idx])))
        chosen.append(pick)
    return RankedSelection(sets=tuple(ordered), chosen=tuple(chosen))


def rank_and_select(
    matrix: ExecutionMatrix, cfg: RankerConfig, k: int
) -> RankedSelection:
    """Exhaustive grouping, scoring, and top-k selection in one call."""
    if not matrix.candidate_ids:
        return RankedSelection(sets=(), chosen=())
    ordered = score_sets(group_by_functionality(matrix), cfg)
    return select_top_k(ordered, k, seed=cfg.seed)


# --------------------------------------------------------------------------
# Iterative (sampling) route
# --------------------------------------------------------------------------

def ransac_rank(
    matrix: ExecutionMatrix, iterations: int, seed: int = 0
) -> list[ConsensusSet]:
    """Build consensus sets by sampling (solution, test) pairs.

    Each iteration draws one pair uniformly; if the solution passes the
    test, the pair seeds a consensus set: all solutions sharing its exact
    pass-set, crossed with that pass-set, scored by the product of the two
    sizes. Recorded sets are deduplicated and returned highest score first.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    n, m = len(matrix.candidate_ids), len(matrix.test_ids)
    if n == 0 or m == 0:
        return []
    rng = random.Random(seed)
    pass_sets = {cid: matrix.pass_set(cid) for cid in matrix.candidate_ids}
    recorded: dict[frozenset[str], ConsensusSet] = {}
    for _ in range(iterations):
        flat = rng.randrange(n * m)
        x = matrix.candidate_ids[flat // m]
        y = matrix.test_ids[flat % m]
        if y not in pass_sets[x]:
            continue  # outlier pair
        tests = pass_sets[x]
        if tests in recorded:
            continue
        solutions = frozenset(
            cid for cid, ps in pass_sets.items() if ps == tests
        )
        recorded[tests] = ConsensusSet(
            solutions=solutions,
            tests=tests,
            score=float(len(solutions) * len(tests)),
        )
    out = list(recorded.values())
    out.sort(key=lambda s: (-s.score, -len(s.tests), s.min_id()))
    return out


# --------------------------------------------------------------------------
# Output-clustering baseline
# --------------------------------------------------------------------------

def alphacode_cluster_rank(
    output_table: Mapping[str, tuple[str, ...]],
    order: Optional[Sequence[str]] = None,
) -> list[ConsensusSet]:
    """Cluster candidates by their output tuples on test inputs.

    Expected outputs play no role; candidates producing identical outputs
    (including identical error markers) share a cluster. Clusters are
    ordered by descending size and carry their size as score; selection
    cycles through them exactly like consensus-set selection.
    """
    clusters: dict[tuple[str, ...], set[str]] = {}
    ids = list(order) if order is not None else list(output_table)
    for cid in ids:
        clusters.setdefault(tuple(output_table[cid]), set()).add(cid)
    sets = [
        ConsensusSet(
            solutions=frozenset(members), tests=frozenset(), score=float(len(members))
        )
        for members in clusters.values()
    ]
    sets.sort(key=lambda s: (-s.score, s.min_id()))
    return sets
