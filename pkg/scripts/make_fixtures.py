#!/usr/bin/env python3
"""Regenerate the committed corpora under fixtures/.

Each fixture ships a problem corpus, a replay directory with canned
generation responses, and a verdict table for the fake-table backend. The
verdict table is authored by actually evaluating the (trusted) fixture
candidates in-process, so the table reflects real language semantics; the
builder then verifies the intended ranking structure and fails loudly if
a fixture drifts.

Usage: python scripts/make_fixtures.py [fixtures-root]
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from execrank.consensus import RankerConfig, Scoring, group_by_functionality, score_sets
from execrank.corpus import (
    Corpus,
    IoMode,
    Problem,
    TestCase,
    TestKind,
    TestOrigin,
    assign_test_ids,
    save_corpus,
)
from execrank.genclient import (
    GenerationConfig,
    RawSample,
    SampleKind,
    build_test_instruction,
    postprocess_solutions,
    postprocess_tests,
    replay_key,
    solution_prompt,
)
from execrank.sandbox import ERROR_MARKER, ExecutionMatrix, Verdict, Outcome, extract_call_inputs


# --------------------------------------------------------------------------
# In-process reference evaluator (trusted fixture code only)
# --------------------------------------------------------------------------

def eval_assertion(solution_src: str, assertion: str) -> str:
    try:
        code = compile(solution_src, "<solution>", "exec")
    except SyntaxError:
        return "syntax_error"
    ns: dict = {}
    try:
        exec(code, ns)
    except BaseException:
        return "runtime_error"
    try:
        test_code = compile(assertion, "<test>", "exec")
    except SyntaxError:
        return "syntax_error"
    try:
        exec(test_code, ns)
    except AssertionError:
        return "assertion_failed"
    except BaseException:
        return "runtime_error"
    return "pass"


def eval_output(solution_src: str, call_expr: str) -> str:
    ns: dict = {}
    try:
        exec(compile(solution_src, "<solution>", "exec"), ns)
        return repr(eval(call_expr, ns))
    except BaseException:
        return ERROR_MARKER


# --------------------------------------------------------------------------
# Fixture description
# --------------------------------------------------------------------------

class ProblemSpec:
    def __init__(
        self,
        pid: str,
        entry: str,
        doc: str,
        canonical: str,
        behaviors: list[tuple[str, int]],
        gen_asserts: list[str],
        gt_asserts: list[str],
        example_asserts: list[str] = (),
    ):
        self.pid = pid
        self.entry = entry
        self.doc = doc
        self.canonical = canonical
        self.behaviors = behaviors  # (body, copies)
        self.gen_asserts = gen_asserts
        self.gt_asserts = gt_asserts
        self.example_asserts = list(example_asserts)

    def context(self, args: str) -> str:
        return (
            f"# library-style problem, no web access\n"
            f"def {self.entry}({args}):\n"
            f'    """{self.doc}"""\n'
        )


def indent(body: str) -> str:
    return "\n".join("    " + ln if ln.strip() else ln for ln in body.split("\n"))


def split_samples(asserts: list[str], per_sample: int) -> list[str]:
    """Compose raw test-sample completions continuing the assert stub."""
    samples = []
    for i in range(0, len(asserts), per_sample):
        chunk = asserts[i : i + per_sample]
        text = chunk[0].removeprefix("assert") + "".join(
            "\n" + stmt for stmt in chunk[1:]
        )
        samples.append(text)
    return samples


def write_replay(
    replay_dir: Path, prompt: str, cfg: GenerationConfig, kind: SampleKind,
    texts: list[str],
) -> None:
    replay_dir.mkdir(parents=True, exist_ok=True)
    response = {
        "choices": [{"text": t, "finish_reason": "stop"} for t in texts],
        "model": "canned",
    }
    key = replay_key(prompt, cfg, kind)
    (replay_dir / f"{key}.json").write_text(
        json.dumps(response, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def build_fixture(
    root: Path,
    name: str,
    specs: list[tuple[ProblemSpec, str]],
    cfg: GenerationConfig,
    with_outputs: bool,
    expect_all_dual_correct: bool,
) -> None:
    out = root / name
    out.mkdir(parents=True, exist_ok=True)
    replay_dir = out / "replay"
    problems: list[Problem] = []
    table_lines: list[str] = []

    for spec, args in specs:
        context = spec.context(args)
        gt = [
            TestCase(kind=TestKind.ASSERTION, assertion=a, origin=TestOrigin.GROUND_TRUTH)
            for a in spec.gt_asserts
        ]
        examples = [
            TestCase(kind=TestKind.ASSERTION, assertion=a, origin=TestOrigin.EXAMPLE)
            for a in spec.example_asserts
        ]
        problem = Problem(
            id=spec.pid,
            context=context,
            entry_point=spec.entry,
            canonical_solution=indent(spec.canonical),
            ground_truth_tests=tuple(gt),
            example_tests=tuple(examples),
            io_mode=IoMode.ASSERTION,
        )
        problem.validate(require_ground_truth=True)
        problems.append(problem)

        bodies = [indent(body) for body, copies in spec.behaviors for _ in range(copies)]
        assert len(bodies) == cfg.n_solution_samples, (
            f"{spec.pid}: {len(bodies)} bodies vs n={cfg.n_solution_samples}"
        )
        write_replay(replay_dir, solution_prompt(problem), cfg, SampleKind.SOLUTION, bodies)
        test_texts = split_samples(spec.gen_asserts, cfg.assert_limit)
        assert len(test_texts) == cfg.n_test_samples, (
            f"{spec.pid}: {len(test_texts)} test samples vs n={cfg.n_test_samples}"
        )
        write_replay(
            replay_dir, build_test_instruction(problem), cfg, SampleKind.TEST, test_texts
        )

        # Reconstruct candidates/tests exactly as the pipeline will.
        sol_samples = [RawSample(t, SampleKind.SOLUTION) for t in bodies]
        candidates = postprocess_solutions(sol_samples, cfg)
        test_samples = [RawSample(t, SampleKind.TEST) for t in test_texts]
        gen_tests = postprocess_tests(test_samples, problem, cfg)
        assert len(gen_tests) == len(spec.gen_asserts), (
            f"{spec.pid}: extraction kept {len(gen_tests)} of {len(spec.gen_asserts)}"
        )
        gt_tests = assign_test_ids(gt, "gt")
        ex_tests = assign_test_ids(examples, "ex")

        sources = {c.id: context + c.body + "\n" for c in candidates}
        sources["canonical"] = context + problem.canonical_solution + "\n"

        def dense(kind: str, sids: list[str], tests: list[TestCase]) -> dict:
            return {
                "problem_id": spec.pid,
                "kind": kind,
                "solution_ids": sids,
                "test_ids": [t.id for t in tests],
                "verdicts": [
                    [
                        {
                            "outcome": eval_assertion(sources[sid], t.assertion),
                            "wall_time": 0.0,
                        }
                        for t in tests
                    ]
                    for sid in sids
                ],
            }

        cids = [c.id for c in candidates]
        gen_rec = dense("generated", cids, gen_tests)
        table_lines.append(json.dumps(gen_rec, sort_keys=True))
        table_lines.append(json.dumps(dense("ground_truth", cids, gt_tests), sort_keys=True))
        if ex_tests:
            table_lines.append(json.dumps(dense("example", cids, ex_tests), sort_keys=True))
        table_lines.append(
            json.dumps(dense("quality", ["canonical"], gen_tests), sort_keys=True)
        )
        if with_outputs:
            inputs = extract_call_inputs(gen_tests, spec.entry)
            for c in candidates:
                for src in inputs:
                    table_lines.append(
                        json.dumps(
                            {
                                "problem_id": spec.pid,
                                "solution_id": c.id,
                                "input": src,
                                "output": eval_output(sources[c.id], src),
                            },
                            sort_keys=True,
                        )
                    )

        # Sanity: the intended structure must actually hold.
        matrix = ExecutionMatrix(
            problem_id=spec.pid,
            candidate_ids=cids,
            test_ids=[t.id for t in gen_tests],
            verdicts=[
                [
                    Verdict(Outcome(cell["outcome"]))
                    for cell in row
                ]
                for row in gen_rec["verdicts"]
            ],
        )
        if expect_all_dual_correct:
            ordered = score_sets(
                group_by_functionality(matrix), RankerConfig(scoring=Scoring.DUAL)
            )
            correct = {
                cid
                for cid in cids
                if all(
                    eval_assertion(sources[cid], t.assertion) == "pass" for t in gt_tests
                )
            }
            top = ordered[0].solutions
            assert top and top <= correct, (
                f"{spec.pid}: dual top set {sorted(top)} is not all-correct "
                f"(correct = {sorted(correct)})"
            )

    corpus = Corpus(name=name, problems=problems)
    save_corpus(corpus, out / f"{name}.jsonl")
    (out / "fake_table.jsonl").write_text(
        "\n".join(table_lines) + "\n", encoding="utf-8"
    )
    print(f"wrote {out} ({len(problems)} problems)")


# --------------------------------------------------------------------------
# Concrete fixtures
# --------------------------------------------------------------------------

def toy_specs() -> list[tuple[ProblemSpec, str]]:
    """Five problems, six candidates each, built so consensus provably
    selects a correct solution while random selection cannot always."""
    add = ProblemSpec(
        "toy/add", "add", "Add two integers.",
        canonical="return a + b",
        behaviors=[
            ("return a + b", 1),
            ("result = a + b\nreturn result", 1),
            ("return b + a", 1),
            ("return a - b", 1),
            ("return  a - b", 1),
            ("raise RuntimeError('broken')", 1),
        ],
        gen_asserts=[
            "assert add(1, 2) == 3",
            "assert add(4, 5) == 9",
            "assert add(10, 3) == 13",
            "assert add(2, 2) == 4",
            "assert add(7, 1) == 8",
            "assert add(0, 6) == 6",
            "assert add(5, 3) == 2",
            "assert add(9, 4) == 5",
        ],
        gt_asserts=["assert add(11, 5) == 16", "assert add(3, 8) == 11"],
    )
    square = ProblemSpec(
        "toy/square", "square", "Return the square of a number.",
        canonical="return x * x",
        behaviors=[
            ("return x * x", 1),
            ("return x ** 2", 1),
            ("return x + x", 1),
            ("raise RuntimeError('broken')", 1),
            ("return 0", 1),
            ("return x", 1),
        ],
        gen_asserts=[
            "assert square(3) == 9",
            "assert square(4) == 16",
            "assert square(5) == 25",
            "assert square(7) == 49",
            "assert square(1) == 1",
            "assert square(3) == 6",
            "assert square(4) == 8",
        ],
        gt_asserts=["assert square(6) == 36", "assert square(9) == 81"],
    )
    concat = ProblemSpec(
        "toy/concat", "concat", "Concatenate two strings in order.",
        canonical="return a + b",
        behaviors=[
            ("return a + b", 1),
            ("return ''.join([a, b])", 1),
            ("out = a\nout += b\nreturn out", 1),
            ("return b + a", 1),
            ("return ''", 1),
            ("raise RuntimeError('broken')", 1),
        ],
        gen_asserts=[
            "assert concat('ab', 'cd') == 'abcd'",
            "assert concat('x', 'yz') == 'xyz'",
            "assert concat('hi', '!') == 'hi!'",
            "assert concat('up', 'down') == 'updown'",
            "assert concat('one', 'two') == 'onetwo'",
            "assert concat('ab', 'cd') == 'cdab'",
        ],
        gt_asserts=["assert concat('left', 'right') == 'leftright'"],
    )
    max3 = ProblemSpec(
        "toy/max3", "max3", "Return the largest of three integers.",
        canonical="return max(a, max(b, c))",
        behaviors=[
            ("return max(a, b, c)", 1),
            ("return max(a, max(b, c))", 1),
            ("m = a\nif b > m:\n    m = b\nif c > m:\n    m = c\nreturn m", 1),
            ("return sorted([a, b, c])[-1]", 1),
            ("return min(a, b, c)", 1),
            ("raise RuntimeError('broken')", 1),
        ],
        gen_asserts=[
            "assert max3(1, 2, 3) == 3",
            "assert max3(9, 2, 5) == 9",
            "assert max3(4, 8, 6) == 8",
            "assert max3(0, 1, 2) == 2",
            "assert max3(7, 5, 3) == 7",
            "assert max3(2, 9, 1) == 9",
        ],
        gt_asserts=["assert max3(10, 4, 6) == 10", "assert max3(1, 12, 9) == 12"],
    )
    absdiff = ProblemSpec(
        "toy/absdiff", "abs_diff", "Return the absolute difference of two integers.",
        canonical="return abs(a - b)",
        behaviors=[
            ("return abs(a - b)", 1),
            ("return abs(b - a)", 1),
            ("d = a - b\nreturn -d if d < 0 else d", 1),
            ("return a - b", 1),
            ("return  a - b", 1),
            ("return 0", 1),
        ],
        gen_asserts=[
            "assert abs_diff(2, 9) == 7",
            "assert abs_diff(9, 2) == 7",
            "assert abs_diff(6, 5) == 1",
            "assert abs_diff(1, 4) == 3",
            "assert abs_diff(10, 3) == 7",
            "assert abs_diff(3, 10) == -7",
            "assert abs_diff(4, 6) == -2",
        ],
        gt_asserts=["assert abs_diff(8, 3) == 5", "assert abs_diff(3, 8) == 5"],
        example_asserts=["assert abs_diff(1, 6) == 5", "assert abs_diff(7, 7) == 0"],
    )
    return [
        (add, "a, b"),
        (square, "x"),
        (concat, "a, b"),
        (max3, "a, b, c"),
        (absdiff, "a, b"),
    ]


def synthetic_specs() -> list[tuple[ProblemSpec, str]]:
    """20 problems, eight candidates each, where the correct behavior is
    denser than any single incorrect behavior.

    Three shapes: the wrong group outnumbers the correct group in
    solutions (solution counting alone fails), the wrong group passes more
    tests (test counting alone fails), or everything favors correctness.
    """
    args_pool = [
        (2, 3), (4, 5), (1, 7), (3, 3), (5, 2), (6, 1), (2, 9), (8, 4),
        (7, 2), (9, 3), (2, 5), (3, 4), (5, 6), (8, 2),
    ]
    specs = []
    for i in range(20):
        shape = "bigwrong" if i % 10 < 3 else "toxic" if i % 10 < 6 else "plain"
        pid = f"syn/p{i:02d}"
        if shape == "bigwrong":
            correct_variants = [
                f"return a + b + {i}",
                f"total = a + b\nreturn total + {i}",
                f"return ({i} + a) + b",
            ]
            wrong_variants = [
                f"return a * b + {i}",
                f"return b * a + {i}",
                f"prod = a * b\nreturn prod + {i}",
                f"return {i} + a * b",
            ]
            junk = ["raise ValueError('nope')"]
            correct_tests = [
                f"assert calc({a}, {b}) == {a + b + i}" for a, b in args_pool[:8]
            ]
            wrong_tests = [
                f"assert calc({a}, {b}) == {a * b + i}" for a, b in args_pool[10:12]
            ]
            gt = [f"assert calc({a}, {b}) == {a + b + i}" for a, b in args_pool[8:10]]
        elif shape == "toxic":
            correct_variants = [
                f"return a * 2 + b + {i}",
                f"return b + 2 * a + {i}",
                f"return a + a + b + {i}",
                f"v = 2 * a\nreturn v + b + {i}",
                f"return {i} + b + a * 2",
            ]
            wrong_variants = [f"return a * 2 + b + {i + 1}"]
            junk = ["return None", "raise ValueError('nope')"]
            correct_tests = [
                f"assert calc({a}, {b}) == {2 * a + b + i}" for a, b in args_pool[:4]
            ]
            wrong_tests = [
                f"assert calc({a}, {b}) == {2 * a + b + i + 1}"
                for a, b in args_pool[4:10]
            ]
            gt = [
                f"assert calc({a}, {b}) == {2 * a + b + i}" for a, b in args_pool[12:14]
            ]
        else:
            correct_variants = [
                "return max(a, b)",
                "return a if a > b else b",
                "return sorted([a, b])[1]",
                "m = a\nif b > a:\n    m = b\nreturn m",
            ]
            wrong_variants = ["return min(a, b)", "return b if a > b else a"]
            junk = ["return None", "raise ValueError('nope')"]
            pairs = [(p, q) for p, q in args_pool if p != q]
            correct_tests = [
                f"assert calc({a}, {b}) == {max(a, b)}" for a, b in pairs[:6]
            ]
            wrong_tests = [
                f"assert calc({a}, {b}) == {min(a, b)}" for a, b in pairs[6:7]
            ]
            gt = [f"assert calc({a}, {b}) == {max(a, b)}" for a, b in [(10, 4), (6, 13)]]
        behaviors = [(v, 1) for v in correct_variants + wrong_variants + junk]
        specs.append(
            (
                ProblemSpec(
                    pid, "calc", f"Desk-scale synthetic problem #{i}.",
                    canonical=correct_variants[0],
                    behaviors=behaviors,
                    gen_asserts=correct_tests + wrong_tests,
                    gt_asserts=gt,
                ),
                "a, b",
            )
        )
    return specs


def main() -> None:
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parents[1] / "fixtures"
    )
    build_fixture(
        root, "toy", toy_specs(),
        GenerationConfig(n_solution_samples=6, n_test_samples=2),
        with_outputs=True, expect_all_dual_correct=True,
    )
    build_fixture(
        root, "synthetic20", synthetic_specs(),
        GenerationConfig(n_solution_samples=8, n_test_samples=2),
        with_outputs=False, expect_all_dual_correct=True,
    )


if __name__ == "__main__":
    main()
