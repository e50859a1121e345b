import itertools

import pytest
from hypothesis import given, settings, strategies as st

from execrank.consensus import ConsensusSet, RankedSelection
from execrank.corpus import Candidate, Problem, TestCase, TestKind
from execrank.evaluation import (
    TestQuality,
    consensus_stats,
    correct_candidate_ids,
    deduplicate,
    detect_trivial,
    filter_by_examples,
    normalize_style,
    pass_at_k_ranked,
    pass_at_k_unbiased,
    probe_inputs_from_tests,
    solved_at_k,
    test_quality as quality_of_tests,
    trivial_from_outputs,
)
from execrank.sandbox import ERROR_MARKER, ExecPolicy, FakeTableBackend, Outcome, Verdict

from conftest import make_matrix

POLICY = ExecPolicy(backend="fake_table")


def brute_force_pass_at_k(n: int, c: int, k: int) -> float:
    """Oracle: enumerate every k-subset of n samples, c of them correct."""
    correct = set(range(c))
    subsets = list(itertools.combinations(range(n), k))
    hits = sum(1 for subset in subsets if correct & set(subset))
    return hits / len(subsets)


# --------------------------------------------------------------------------
# pass@k
# --------------------------------------------------------------------------

def test_pass_at_k_all_correct():
    assert pass_at_k_unbiased(100, 100, 1) == 1.0


def test_pass_at_k_half():
    assert pass_at_k_unbiased(2, 1, 1) == 0.5


def test_pass_at_k_enumeration_example():
    # Oracle first: 9 of the C(5,3)=10 subsets contain a correct sample.
    assert brute_force_pass_at_k(5, 2, 3) == pytest.approx(0.9)
    assert pass_at_k_unbiased(5, 2, 3) == pytest.approx(0.9, abs=1e-12)


def test_pass_at_k_preconditions():
    with pytest.raises(ValueError):
        pass_at_k_unbiased(5, 6, 1)
    with pytest.raises(ValueError):
        pass_at_k_unbiased(5, 2, 0)
    with pytest.raises(ValueError):
        pass_at_k_unbiased(5, 2, 6)
    with pytest.raises(ValueError):
        pass_at_k_unbiased(5, -1, 1)


def test_pass_at_k_large_n_is_stable():
    value = pass_at_k_unbiased(10_000, 137, 100)
    assert 0.0 < value < 1.0
    # Complement survives without overflow at the far end too.
    assert pass_at_k_unbiased(10_000, 1, 10_000) == 1.0


@given(st.integers(min_value=1, max_value=40))
@settings(max_examples=30, deadline=None)
def test_pass_at_k_monotone_in_k(n):
    c = n // 3
    values = [pass_at_k_unbiased(n, c, k) for k in range(1, n + 1)]
    assert all(b >= a - 1e-15 for a, b in zip(values, values[1:]))
    assert values[-1] == (1.0 if c >= 1 else 0.0)


# --------------------------------------------------------------------------
# Ranked pass@k
# --------------------------------------------------------------------------

def selection(*chosen):
    return RankedSelection(sets=(), chosen=tuple(chosen))


def test_solved_at_k_first_pick_correct():
    assert solved_at_k(selection("good", "bad"), frozenset({"good"}), 1)


def test_solved_at_k_second_pick_correct():
    sel = selection("bad", "good")
    correct = frozenset({"good"})
    assert not solved_at_k(sel, correct, 1)
    assert solved_at_k(sel, correct, 2)


def test_pass_at_k_ranked_mean():
    # Toy corpus of 4 problems, 3 solved at k=1.
    selections = {
        "p0": selection("good"),
        "p1": selection("good"),
        "p2": selection("bad"),
        "p3": selection("good"),
    }
    correct = {pid: frozenset({"good"}) for pid in selections}
    assert pass_at_k_ranked(selections, correct, 1) == pytest.approx(0.75)


def test_pass_at_k_ranked_missing_ground_truth():
    with pytest.raises(ValueError, match="p0"):
        pass_at_k_ranked({"p0": selection("x")}, {}, 1)


def test_empty_selection_counts_unsolved():
    assert not solved_at_k(selection(), frozenset({"good"}), 1)


# --------------------------------------------------------------------------
# Test quality
# --------------------------------------------------------------------------

def quality_fixture(canonical_passes: set[str], candidate_passes: dict[str, set[str]]):
    """Fake-table setup for one problem with 10 generated tests."""
    problem = Problem(
        id="q0",
        context="def f(x):\n    pass\n",
        entry_point="f",
        canonical_solution="    return x\n",
    )
    tests = [
        TestCase(kind=TestKind.ASSERTION, assertion=f"assert f({j}) == {j}", id=f"g{j}")
        for j in range(10)
    ]
    candidates = [Candidate(id=c, body="    return x\n", sample_index=i)
                  for i, c in enumerate(sorted(candidate_passes))]
    table = {}
    for j, tc in enumerate(tests):
        outcome = Outcome.PASS if tc.id in canonical_passes else Outcome.ASSERTION_FAILED
        table[("q0", "canonical", tc.id)] = Verdict(outcome)
        for cid, passes in candidate_passes.items():
            outcome = Outcome.PASS if tc.id in passes else Outcome.ASSERTION_FAILED
            table[("q0", cid, tc.id)] = Verdict(outcome)
    return problem, tests, candidates, FakeTableBackend(table=table)


def test_accuracy_counts_canonical_passes():
    problem, tests, candidates, backend = quality_fixture(
        canonical_passes={f"g{j}" for j in range(9)},
        candidate_passes={"c0": set()},
    )
    quality = quality_of_tests(problem, tests, candidates, POLICY, backend)
    assert quality.accuracy == pytest.approx(0.9)


def test_canonical_failure_without_passing_candidate_is_not_toxic():
    problem, tests, candidates, backend = quality_fixture(
        canonical_passes={f"g{j}" for j in range(9)},
        candidate_passes={"c0": {"g0"}},  # nobody passes g9
    )
    quality = quality_of_tests(problem, tests, candidates, POLICY, backend)
    assert quality.toxicity_rate == 0.0


def test_canonical_failure_with_passing_candidate_is_toxic():
    problem, tests, candidates, backend = quality_fixture(
        canonical_passes={f"g{j}" for j in range(9)},
        candidate_passes={"c0": {"g9"}},
    )
    quality = quality_of_tests(problem, tests, candidates, POLICY, backend)
    assert quality.toxicity_rate == pytest.approx(0.1)


def test_quality_absent_without_canonical():
    problem, tests, candidates, backend = quality_fixture(set(), {"c0": set()})
    from dataclasses import replace

    stripped = replace(problem, canonical_solution=None)
    quality = quality_of_tests(stripped, tests, candidates, POLICY, backend)
    assert quality == TestQuality(accuracy=None, toxicity_rate=None)


def test_toxic_test_never_counts_accurate():
    problem, tests, candidates, backend = quality_fixture(
        canonical_passes={"g0", "g1"},
        candidate_passes={"c0": {"g2", "g3"}},
    )
    quality = quality_of_tests(problem, tests, candidates, POLICY, backend)
    # Accuracy counts g0,g1; toxicity counts g2,g3; disjoint by definition.
    assert quality.accuracy + quality.toxicity_rate <= 1.0
    assert quality.accuracy == pytest.approx(0.2)
    assert quality.toxicity_rate == pytest.approx(0.2)


def test_correct_candidate_ids():
    judge = make_matrix(
        ["a", "b"], ["gt0", "gt1"], {"a": {"gt0", "gt1"}, "b": {"gt0"}}
    )
    assert correct_candidate_ids(judge) == {"a"}


# --------------------------------------------------------------------------
# Trivial-solution detection
# --------------------------------------------------------------------------

def trivial_backend(outputs: dict[str, str]):
    return FakeTableBackend(
        outputs={("p0", "s0", src): out for src, out in outputs.items()}
    )


PROBLEM = Problem(id="p0", context="def f(x):\n    pass\n", entry_point="f")
CAND = Candidate(id="s0", body="    return 0\n", sample_index=0)


def test_constant_candidate_is_trivial():
    backend = trivial_backend({"f(1)": "0", "f(2)": "0", "f('a')": "0"})
    assert detect_trivial(PROBLEM, CAND, ["f(1)", "f(2)", "f('a')"], POLICY, backend)


def test_identity_candidate_is_trivial():
    backend = trivial_backend({"f(1)": "1", "f(2)": "2"})
    assert detect_trivial(PROBLEM, CAND, ["f(1)", "f(2)"], POLICY, backend)


def test_square_candidate_is_not_trivial():
    # Oracle: direct evaluation of the square function on the probes.
    square = eval("lambda x: x * x")
    outputs = {f"f({x})": repr(square(x)) for x in (1, 2)}
    assert outputs == {"f(1)": "1", "f(2)": "4"}
    backend = trivial_backend(outputs)
    assert not detect_trivial(PROBLEM, CAND, ["f(1)", "f(2)"], POLICY, backend)


def test_erroring_probe_disqualifies():
    backend = trivial_backend({"f(1)": "0", "f(2)": ERROR_MARKER})
    assert not detect_trivial(PROBLEM, CAND, ["f(1)", "f(2)"], POLICY, backend)


def test_detect_trivial_needs_two_probes():
    backend = trivial_backend({"f(1)": "0"})
    with pytest.raises(ValueError):
        detect_trivial(PROBLEM, CAND, ["f(1)", "f(1)"], POLICY, backend)


def test_trivial_from_outputs_stdio_identity():
    assert trivial_from_outputs(["1 2\n", "3 4\n"], ["1 2\n", "3 4\n"], stdio=True)


def test_probe_inputs_fall_back_to_defaults():
    tests = [TestCase(kind=TestKind.ASSERTION, assertion="assert f(1) == 1", id="g0")]
    probes = probe_inputs_from_tests(tests, "f")
    assert len(probes) >= 2
    assert all(p.startswith("f(") for p in probes)


# --------------------------------------------------------------------------
# De-duplication
# --------------------------------------------------------------------------

def cands(*bodies):
    return [Candidate(id=f"s{i}", body=b, sample_index=i) for i, b in enumerate(bodies)]


def test_dedup_removes_byte_identical():
    out, _ = deduplicate(cands("    return 1\n", "    return 1\n"), [], True, False)
    assert [c.id for c in out] == ["s0"]


def test_dedup_removes_whitespace_variants():
    a, b = "    return a  -  b\n", "    return a - b\n"
    # Formatter oracle: both normalize to the same text.
    assert normalize_style(a) == normalize_style(b)
    out, _ = deduplicate(cands(a, b), [], True, False)
    assert [c.id for c in out] == ["s0"]


def test_dedup_default_is_identity():
    candidates = cands("    return 1\n", "    return 1\n")
    tests = [TestCase(kind=TestKind.ASSERTION, assertion="assert f(1) == 1", id="g0")] * 2
    out_c, out_t = deduplicate(candidates, tests)
    assert out_c == candidates
    assert out_t == tests


def test_dedup_tests():
    tests = [
        TestCase(kind=TestKind.ASSERTION, assertion="assert f(1)  ==  1", id="g0"),
        TestCase(kind=TestKind.ASSERTION, assertion="assert f(1) == 1", id="g1"),
        TestCase(kind=TestKind.ASSERTION, assertion="assert f(2) == 2", id="g2"),
    ]
    _, out = deduplicate([], tests, False, True)
    assert [t.id for t in out] == ["g0", "g2"]


def test_dedup_idempotent_and_order_stable():
    candidates = cands("    return 2\n", "    return 1\n", "    return 2\n")
    once, _ = deduplicate(candidates, [], True, False)
    twice, _ = deduplicate(once, [], True, False)
    assert once == twice
    assert [c.id for c in once] == ["s0", "s1"]


def test_unparseable_snippet_survives_normalizer():
    body = "    return ((\n"
    assert normalize_style(body) == body
    out, _ = deduplicate(cands(body, body), [], True, False)
    assert len(out) == 1


# --------------------------------------------------------------------------
# Example filtering
# --------------------------------------------------------------------------

def example_problem(n_examples):
    examples = tuple(
        TestCase(kind=TestKind.ASSERTION, assertion=f"assert f({j}) == {j}", id=f"ex{j}")
        for j in range(n_examples)
    )
    return Problem(
        id="p0", context="def f(x):\n    pass\n", entry_point="f", example_tests=examples
    )


def test_filter_without_examples_is_identity():
    candidates = cands("    return 1\n")
    out = filter_by_examples(example_problem(0), candidates, POLICY, FakeTableBackend())
    assert out == candidates


def test_filter_drops_candidate_failing_one_example():
    problem = example_problem(2)
    candidates = cands("a", "b")
    table = {
        ("p0", "s0", "ex0"): Verdict(Outcome.PASS),
        ("p0", "s0", "ex1"): Verdict(Outcome.PASS),
        ("p0", "s1", "ex0"): Verdict(Outcome.PASS),
        ("p0", "s1", "ex1"): Verdict(Outcome.ASSERTION_FAILED),
    }
    out = filter_by_examples(problem, candidates, POLICY, FakeTableBackend(table=table))
    assert [c.id for c in out] == ["s0"]


def test_filter_can_empty_the_pool():
    problem = example_problem(1)
    candidates = cands("a")
    table = {("p0", "s0", "ex0"): Verdict(Outcome.RUNTIME_ERROR)}
    out = filter_by_examples(problem, candidates, POLICY, FakeTableBackend(table=table))
    assert out == []


# --------------------------------------------------------------------------
# Distribution stats
# --------------------------------------------------------------------------

def consensus_set(n_solutions):
    return ConsensusSet(
        solutions=frozenset(f"s{i}" for i in range(n_solutions)), tests=frozenset()
    )


def test_stats_single_problem_count():
    stats = consensus_stats({"p0": [consensus_set(2)] * 3})
    assert stats["per_problem"]["p0"]["set_count"] == 3


def test_stats_mean_median():
    stats = consensus_stats(
        {"p0": [consensus_set(1)] * 2, "p1": [consensus_set(1)] * 4}
    )
    assert stats["aggregate"]["set_count_mean"] == 3
    assert stats["aggregate"]["set_count_median"] == 3


def test_stats_histogram_matches_recount():
    sets_per_problem = {
        f"p{i}": [consensus_set(3)] * (i % 4 + 1) for i in range(12)
    }
    stats = consensus_stats(sets_per_problem)
    # Oracle: independent recount.
    from collections import Counter

    recount = Counter(len(sets) for sets in sets_per_problem.values())
    observed = Counter(
        entry["set_count"] for entry in stats["per_problem"].values()
    )
    assert observed == recount
    assert stats["per_problem"]["p3"]["top_set_size"] == 3


def test_filter_trivial_drops_constant_keeps_real():
    from execrank.evaluation import filter_trivial

    problem = Problem(id="p0", context="def f(x):\n    pass\n", entry_point="f")
    tests = [
        TestCase(kind=TestKind.ASSERTION, assertion="assert f(1) == 1", id="g0"),
        TestCase(kind=TestKind.ASSERTION, assertion="assert f(2) == 4", id="g1"),
    ]
    candidates = [
        Candidate(id="const", body="    return 0\n", sample_index=0),
        Candidate(id="sq", body="    return x * x\n", sample_index=1),
    ]
    backend = FakeTableBackend(
        outputs={
            ("p0", "const", "f(1)"): "0",
            ("p0", "const", "f(2)"): "0",
            ("p0", "sq", "f(1)"): "1",
            ("p0", "sq", "f(2)"): "4",
        }
    )
    kept = filter_trivial(problem, candidates, tests, POLICY, backend)
    assert [c.id for c in kept] == ["sq"]


def test_example_filter_never_hurts_when_examples_subset_of_ground_truth():
    """With honest examples (a subset of ground truth) the filter can only
    remove incorrect candidates, so pass@k never decreases."""
    from execrank.consensus import RankerConfig, rank_and_select

    # Wrong behavior: two candidates passing two generated tests; correct:
    # one candidate passing one generated test. Unfiltered, the wrong group
    # outranks the correct one.
    gen = make_matrix(
        ["w1", "w2", "ok"],
        ["g0", "g1", "g2"],
        {"w1": {"g0", "g1"}, "w2": {"g0", "g1"}, "ok": {"g2"}},
    )
    judge = make_matrix(
        ["w1", "w2", "ok"],
        ["gt0", "gt1"],
        {"ok": {"gt0", "gt1"}},
    )
    example = judge.restrict(None, ["gt0"])  # examples ⊂ ground truth

    def ranked_pass_at_1(matrix, judge_matrix):
        sel = rank_and_select(matrix, RankerConfig(seed=0), 1)
        correct = correct_candidate_ids(judge_matrix)
        return float(solved_at_k(sel, correct, 1))

    before_ranked = ranked_pass_at_1(gen, judge)
    before_baseline = pass_at_k_unbiased(3, 1, 1)

    survivors = [
        cid for cid in example.candidate_ids
        if len(example.pass_set(cid)) == len(example.test_ids)
    ]
    assert survivors == ["ok"]  # only the correct candidate passes examples
    after_ranked = ranked_pass_at_1(
        gen.restrict(survivors, None), judge.restrict(survivors, None)
    )
    after_baseline = pass_at_k_unbiased(1, 1, 1)

    assert after_ranked >= before_ranked
    assert after_baseline >= before_baseline
    assert (before_ranked, after_ranked) == (0.0, 1.0)


def test_pass_at_k_record_validates_range():
    from execrank.evaluation import PassAtK, PassAtKMode

    record = PassAtK(k=1, value=0.5, mode=PassAtKMode.UNBIASED_BASELINE)
    assert record.mode.value == "unbiased_baseline"
    with pytest.raises(ValueError):
        PassAtK(k=1, value=1.5, mode=PassAtKMode.RANKED_SELECTION)
