"""Run-directory pipeline: generate, execute, rank, evaluate.

Every stage writes one machine-readable artifact into the run directory
and stamps it with the manifest content hash; a stage is skipped when its
artifact already carries the current hash. Given a fixed seed, replayed
generations, and a deterministic backend, reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .consensus import (
    RankedSelection,
    RankerConfig,
    Scoring,
    alphacode_cluster_rank,
    derive_seed,
    group_by_functionality,
    ransac_rank,
    rank_and_select,
    score_sets,
    select_top_k,
)
from .corpus import (
    Candidate,
    Corpus,
    CorpusError,
    IoMode,
    Problem,
    TestCase,
    assign_test_ids,
    load_corpus,
    candidate_from_record,
    candidate_to_record,
    test_from_record,
    test_to_record,
)
from .evaluation import (
    CANONICAL_ID,
    consensus_stats,
    correct_candidate_ids,
    deduplicate,
    pass_at_k_unbiased,
    solved_at_k,
    trivial_from_outputs,
)
from .genclient import (
    GenerationConfig,
    Provider,
    SampleKind,
    build_test_instruction,
    generate,
    postprocess_solutions,
    postprocess_tests,
    solution_prompt,
)
from .sandbox import (
    Backend,
    ExecPolicy,
    ExecutionMatrix,
    FakeTableBackend,
    SandboxError,
    ShimBackend,
    capture_outputs,
    compose_solution,
    execute_matrix,
    extract_call_inputs,
    matrix_from_record,
    matrix_to_record,
)

log = logging.getLogger(__name__)

RANKER_NAMES = (
    "baseline",
    "dual",
    "solutions_only",
    "tests_only",
    "random",
    "alphacode_cluster",
)
ABLATION_NAMES = ("dedup", "trivial", "example-filter")
RANSAC_ITERATION_CAP = 200_000


class PipelineError(RuntimeError):
    """Stage failure; carries the stage name for exit-code mapping."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class RunManifest:
    corpus_path: str
    corpus_sha256: str
    generation: GenerationConfig
    policy: ExecPolicy
    ranker: RankerConfig
    seed: int = 0
    k_list: tuple[int, ...] = (1, 2)
    rankers: tuple[str, ...] = ("baseline", "dual")
    ablations: tuple[str, ...] = ()
    method: str = "exhaustive"
    iterations: Optional[int] = None
    replay_dir: Optional[str] = None
    fake_table_path: Optional[str] = None
    fake_table_sha256: Optional[str] = None
    shim_path: Optional[str] = None
    figures: bool = True
    version: str = __version__

    def content_hash(self) -> str:
        """Hash of everything that can change artifact content.

        Parallelism (worker count), artifact locations, and the figures
        switch are deliberately excluded: they must not change results.
        """
        content = {
            "corpus_sha256": self.corpus_sha256,
            "generation": asdict(self.generation),
            "timeout_per_test": self.policy.timeout_per_test,
            "memory_limit": self.policy.memory_limit,
            "backend": self.policy.backend.value,
            "ranker": {
                "scoring": self.ranker.scoring.value,
                "alpha": self.ranker.alpha,
                "tie_break": self.ranker.tie_break.value,
            },
            "seed": self.seed,
            "k_list": list(self.k_list),
            "rankers": list(self.rankers),
            "ablations": list(self.ablations),
            "method": self.method,
            "iterations": self.iterations,
            "fake_table_sha256": self.fake_table_sha256,
            "version": self.version,
        }
        canonical = json.dumps(content, sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def to_json(self) -> dict:
        rec = {
            "corpus_path": self.corpus_path,
            "corpus_sha256": self.corpus_sha256,
            "generation": asdict(self.generation),
            "policy": {
                "timeout_per_test": self.policy.timeout_per_test,
                "max_parallel_workers": self.policy.max_parallel_workers,
                "memory_limit": self.policy.memory_limit,
                "backend": self.policy.backend.value,
            },
            "ranker": {
                "scoring": self.ranker.scoring.value,
                "alpha": self.ranker.alpha,
                "tie_break": self.ranker.tie_break.value,
                "seed": self.ranker.seed,
            },
            "seed": self.seed,
            "k_list": list(self.k_list),
            "rankers": list(self.rankers),
            "ablations": list(self.ablations),
            "method": self.method,
            "iterations": self.iterations,
            "replay_dir": self.replay_dir,
            "fake_table_path": self.fake_table_path,
            "fake_table_sha256": self.fake_table_sha256,
            "shim_path": self.shim_path,
            "figures": self.figures,
            "version": self.version,
            "manifest_hash": self.content_hash(),
            "artifacts": {
                "candidates": "candidates.jsonl",
                "tests": "tests.jsonl",
                "matrix": "matrix.jsonl",
                "ranking": "ranking.json",
                "report": "report.json",
            },
        }
        return rec


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _dump_json(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n"


def _artifact_fresh(path: Path, manifest_hash: str) -> bool:
    if not path.exists():
        return False
    try:
        with path.open(encoding="utf-8") as fh:
            if path.suffix == ".jsonl":
                head = json.loads(fh.readline())
            else:
                head = json.load(fh)
    except (json.JSONDecodeError, OSError):
        return False
    return head.get("_manifest_hash") == manifest_hash


@dataclass
class RunState:
    """In-memory view of all stage products for one run."""

    corpus: Corpus
    candidates: dict[str, list[Candidate]] = field(default_factory=dict)
    tests: dict[str, list[TestCase]] = field(default_factory=dict)
    # matrices[pid][kind] for kind in generated/ground_truth/example/quality
    matrices: dict[str, dict[str, ExecutionMatrix]] = field(default_factory=dict)
    outputs: dict[str, dict[str, tuple[str, ...]]] = field(default_factory=dict)


# --------------------------------------------------------------------------
# Stage: generation
# --------------------------------------------------------------------------

def stage_generate(
    state: RunState,
    manifest: RunManifest,
    run_dir: Path,
    provider: Optional[Provider],
    concurrency: int = 4,
    which: str = "both",
) -> None:
    want_solutions = which in ("both", "solutions")
    want_tests = which in ("both", "tests")
    cand_path = run_dir / "candidates.jsonl"
    tests_path = run_dir / "tests.jsonl"
    mhash = manifest.content_hash()
    fresh_solutions = _artifact_fresh(cand_path, mhash)
    fresh_tests = _artifact_fresh(tests_path, mhash)
    if (not want_solutions or fresh_solutions) and (not want_tests or fresh_tests):
        log.info("generation artifacts fresh; skipping")
        load_generated_artifacts(
            state,
            cand_path if fresh_solutions else None,
            tests_path if fresh_tests else None,
        )
        return

    corpus = state.corpus
    if provider is None:
        if want_solutions and not corpus.candidates:
            raise PipelineError(
                "generation",
                "no provider, no replay directory, and the corpus ships no "
                "candidate store",
            )
        log.info("adopting candidate/test stores shipped with the corpus")
        if want_solutions:
            state.candidates = {
                p.id: list(corpus.candidates.get(p.id, [])) for p in corpus.problems
            }
        if want_tests:
            state.tests = {
                p.id: assign_test_ids(corpus.generated_tests.get(p.id, []), "g")
                for p in corpus.problems
            }
    else:
        cfg = manifest.generation

        def one(problem: Problem) -> tuple[str, list[Candidate], list[TestCase]]:
            cands: list[Candidate] = []
            tests: list[TestCase] = []
            if want_solutions:
                samples = generate(
                    solution_prompt(problem), cfg, provider, SampleKind.SOLUTION
                )
                cands = postprocess_solutions(samples, cfg)
            if want_tests:
                samples = generate(
                    build_test_instruction(problem), cfg, provider, SampleKind.TEST
                )
                tests = postprocess_tests(samples, problem, cfg)
            return problem.id, cands, tests

        try:
            if concurrency > 1 and len(corpus.problems) > 1:
                with ThreadPoolExecutor(max_workers=concurrency) as pool:
                    results = list(pool.map(one, corpus.problems))
            else:
                results = [one(p) for p in corpus.problems]
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError("generation", str(exc)) from exc
        for pid, cands, tests in results:
            if want_solutions:
                state.candidates[pid] = cands
            if want_tests:
                state.tests[pid] = tests

    if want_solutions:
        with cand_path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps({"_manifest_hash": mhash}) + "\n")
            for p in corpus.problems:
                for c in state.candidates.get(p.id, []):
                    rec = {"problem_id": p.id, **candidate_to_record(c)}
                    fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
    if want_tests:
        with tests_path.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps({"_manifest_hash": mhash}) + "\n")
            for p in corpus.problems:
                for tc in state.tests.get(p.id, []):
                    rec = {"problem_id": p.id, **test_to_record(tc)}
                    fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def load_generated_artifacts(
    state: RunState, cand_path: Optional[Path], tests_path: Optional[Path]
) -> None:
    if cand_path is not None:
        state.candidates = {p.id: [] for p in state.corpus.problems}
        with cand_path.open(encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if "_manifest_hash" in rec and "problem_id" not in rec:
                    continue
                state.candidates.setdefault(rec["problem_id"], []).append(
                    candidate_from_record(rec)
                )
    if tests_path is not None:
        state.tests = {p.id: [] for p in state.corpus.problems}
        with tests_path.open(encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if "_manifest_hash" in rec and "problem_id" not in rec:
                    continue
                state.tests.setdefault(rec["problem_id"], []).append(
                    test_from_record(rec)
                )
        for pid, tests in state.tests.items():
            state.tests[pid] = assign_test_ids(tests, "g")


# --------------------------------------------------------------------------
# Stage: execution
# --------------------------------------------------------------------------

def _make_backend(manifest: RunManifest) -> FakeTableBackend | ShimBackend:
    if manifest.policy.backend is Backend.FAKE_TABLE:
        if not manifest.fake_table_path:
            raise PipelineError("execution", "fake_table backend needs --fake-table")
        return FakeTableBackend().load(manifest.fake_table_path)
    if not manifest.shim_path:
        raise PipelineError("execution", "shim backend needs --shim <runner script>")
    return ShimBackend(
        manifest.shim_path,
        lanes=manifest.policy.max_parallel_workers,
        memory_limit=manifest.policy.memory_limit,
    )


def _needs_outputs(manifest: RunManifest) -> bool:
    return "alphacode_cluster" in manifest.rankers or "trivial" in manifest.ablations


def stage_execute(state: RunState, manifest: RunManifest, run_dir: Path) -> None:
    matrix_path = run_dir / "matrix.jsonl"
    mhash = manifest.content_hash()
    if _artifact_fresh(matrix_path, mhash):
        log.info("matrix artifact fresh; skipping execution")
        load_matrix_artifacts(state, matrix_path)
        return
    backend = _make_backend(manifest)
    policy = manifest.policy
    try:
        for problem in state.corpus.problems:
            cands = state.candidates.get(problem.id, [])
            gen_tests = state.tests.get(problem.id, [])
            gt_tests = assign_test_ids(problem.ground_truth_tests, "gt")
            per: dict[str, ExecutionMatrix] = {}
            per["generated"] = execute_matrix(problem, cands, gen_tests, policy, backend)
            per["ground_truth"] = execute_matrix(problem, cands, gt_tests, policy, backend)
            if problem.example_tests:
                ex_tests = assign_test_ids(problem.example_tests, "ex")
                per["example"] = execute_matrix(problem, cands, ex_tests, policy, backend)
            if problem.canonical_solution is not None and gen_tests:
                canonical = Candidate(
                    id=CANONICAL_ID, body=problem.canonical_solution, sample_index=-1
                )
                per["quality"] = execute_matrix(
                    problem, [canonical], gen_tests, policy, backend,
                    solution_sources={
                        CANONICAL_ID: compose_solution(problem, problem.canonical_solution)
                    },
                )
            state.matrices[problem.id] = per
            if _needs_outputs(manifest):
                inputs = extract_call_inputs(gen_tests, problem.entry_point)
                state.outputs[problem.id] = capture_outputs(
                    problem, cands, inputs, policy, backend
                )
    except SandboxError as exc:
        raise PipelineError("execution", str(exc)) from exc
    finally:
        backend.close()

    with matrix_path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"_manifest_hash": mhash}) + "\n")
        for problem in state.corpus.problems:
            for kind in ("generated", "ground_truth", "example", "quality"):
                matrix = state.matrices.get(problem.id, {}).get(kind)
                if matrix is None:
                    continue
                rec = matrix_to_record(matrix, kind)
                fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
            inputs = extract_call_inputs(
                state.tests.get(problem.id, []), problem.entry_point
            )
            for cid, outs in sorted(state.outputs.get(problem.id, {}).items()):
                for src, out in zip(inputs, outs):
                    rec = {
                        "problem_id": problem.id,
                        "solution_id": cid,
                        "input": src,
                        "output": out,
                    }
                    fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


def load_matrix_artifacts(state: RunState, matrix_path: Path) -> None:
    state.matrices = {}
    state.outputs = {}
    inputs_order: dict[str, list[str]] = {}
    raw_outputs: dict[str, dict[str, dict[str, str]]] = {}
    with matrix_path.open(encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if "_manifest_hash" in rec and "problem_id" not in rec:
                continue
            if "verdicts" in rec:
                state.matrices.setdefault(rec["problem_id"], {})[
                    rec.get("kind", "generated")
                ] = matrix_from_record(rec)
            elif "output" in rec:
                pid = rec["problem_id"]
                raw_outputs.setdefault(pid, {}).setdefault(rec["solution_id"], {})[
                    rec["input"]
                ] = rec["output"]
                order = inputs_order.setdefault(pid, [])
                if rec["input"] not in order:
                    order.append(rec["input"])
    for pid, by_cid in raw_outputs.items():
        state.outputs[pid] = {
            cid: tuple(vals.get(src, "") for src in inputs_order[pid])
            for cid, vals in by_cid.items()
        }


# --------------------------------------------------------------------------
# Stage: ranking
# --------------------------------------------------------------------------

def rank_problem(
    matrix: ExecutionMatrix,
    cfg: RankerConfig,
    k: int,
    seed: int,
    method: str = "exhaustive",
    iterations: Optional[int] = None,
) -> RankedSelection:
    """Rank one problem's matrix and select k ids, by either route."""
    if not matrix.candidate_ids:
        return RankedSelection(sets=(), chosen=())
    if method == "ransac":
        n, m = len(matrix.candidate_ids), len(matrix.test_ids)
        budget = iterations or min(10 * n * m, RANSAC_ITERATION_CAP)
        sets = ransac_rank(matrix, max(1, budget), seed=seed)
        if not sets:  # only outliers sampled: fall back to one zero-score set
            sets = score_sets(group_by_functionality(matrix), cfg)
        else:
            sets = score_sets(sets, cfg)
        return select_top_k(sets, k, seed=seed)
    local = RankerConfig(
        scoring=cfg.scoring, alpha=cfg.alpha, tie_break=cfg.tie_break, seed=seed
    )
    return rank_and_select(matrix, local, k)


def stage_rank(state: RunState, manifest: RunManifest, run_dir: Path) -> dict:
    ranking_path = run_dir / "ranking.json"
    mhash = manifest.content_hash()
    if _artifact_fresh(ranking_path, mhash):
        log.info("ranking artifact fresh; skipping")
        return json.loads(ranking_path.read_text(encoding="utf-8"))
    k = max(manifest.k_list)
    problems_out = {}
    for problem in state.corpus.problems:
        matrix = state.matrices[problem.id]["generated"]
        selection = rank_problem(
            matrix,
            manifest.ranker,
            k,
            seed=derive_seed(manifest.seed, problem.id),
            method=manifest.method,
            iterations=manifest.iterations,
        )
        problems_out[problem.id] = {
            "sets": [
                {
                    "solutions": sorted(s.solutions),
                    "tests": sorted(s.tests),
                    "score": s.score,
                }
                for s in selection.sets
            ],
            "chosen": list(selection.chosen),
        }
    ranking = {
        "_manifest_hash": mhash,
        "method": manifest.method,
        "scoring": manifest.ranker.scoring.value,
        "alpha": manifest.ranker.alpha,
        "k": k,
        "problems": problems_out,
    }
    ranking_path.write_text(_dump_json(ranking), encoding="utf-8")
    return ranking


# --------------------------------------------------------------------------
# Stage: evaluation
# --------------------------------------------------------------------------

def _selection_for_ranker(
    name: str,
    problem: Problem,
    matrix: ExecutionMatrix,
    outputs: Optional[dict[str, tuple[str, ...]]],
    manifest: RunManifest,
    k: int,
) -> Optional[RankedSelection]:
    seed = derive_seed(manifest.seed, problem.id)
    if name == "alphacode_cluster":
        if not matrix.candidate_ids:
            return RankedSelection(sets=(), chosen=())
        if outputs is None:
            raise PipelineError(
                "evaluation", f"ranker {name} needs captured outputs for {problem.id}"
            )
        table = {cid: outputs.get(cid, ()) for cid in matrix.candidate_ids}
        clusters = alphacode_cluster_rank(table, order=matrix.candidate_ids)
        return select_top_k(clusters, k, seed=seed)
    scoring = {
        "dual": Scoring.DUAL,
        "solutions_only": Scoring.SOLUTIONS_ONLY,
        "tests_only": Scoring.TESTS_ONLY,
        "random": Scoring.RANDOM,
    }[name]
    cfg = RankerConfig(
        scoring=scoring,
        alpha=manifest.ranker.alpha,
        tie_break=manifest.ranker.tie_break,
        seed=seed if scoring is not Scoring.RANDOM else derive_seed(seed, "scores"),
    )
    return rank_and_select(matrix, cfg, k)


def _pass_table(
    state: RunState,
    manifest: RunManifest,
    candidates: dict[str, list[Candidate]],
    gen_matrices: dict[str, ExecutionMatrix],
    judge_matrices: dict[str, ExecutionMatrix],
) -> tuple[dict, dict]:
    """Per-problem and aggregate pass@k for every requested ranker."""
    k_max = max(manifest.k_list)
    per_problem: dict[str, dict] = {p.id: {} for p in state.corpus.problems}
    chosen: dict[str, dict] = {p.id: {} for p in state.corpus.problems}
    aggregate: dict[str, dict[str, float]] = {}
    for name in manifest.rankers:
        agg: dict[str, list[float]] = {str(k): [] for k in manifest.k_list}
        for problem in state.corpus.problems:
            pid = problem.id
            cands = candidates[pid]
            judge = judge_matrices[pid]
            correct = correct_candidate_ids(judge) if cands else frozenset()
            values: dict[str, float] = {}
            if name == "baseline":
                n = len(cands)
                c = len(correct)
                for k in manifest.k_list:
                    if n == 0:
                        values[str(k)] = 0.0
                    else:
                        values[str(k)] = pass_at_k_unbiased(n, c, min(k, n))
            else:
                selection = _selection_for_ranker(
                    name, problem, gen_matrices[pid],
                    state.outputs.get(pid), manifest, k_max,
                )
                chosen[pid][name] = list(selection.chosen)
                for k in manifest.k_list:
                    values[str(k)] = float(solved_at_k(selection, correct, k))
            per_problem[pid][name] = values
            for k in manifest.k_list:
                agg[str(k)].append(values[str(k)])
        aggregate[name] = {
            kk: (statistics.mean(vals) if vals else 0.0) for kk, vals in agg.items()
        }
    return (
        {"per_problem": per_problem, "aggregate": aggregate, "chosen": chosen},
        aggregate,
    )


def _apply_ablation(
    state: RunState,
    manifest: RunManifest,
    ablation: str,
) -> tuple[dict[str, list[Candidate]], dict[str, ExecutionMatrix], dict[str, ExecutionMatrix]]:
    """Filtered candidate/test views and correspondingly restricted matrices."""
    backend = None
    candidates: dict[str, list[Candidate]] = {}
    gen_matrices: dict[str, ExecutionMatrix] = {}
    judge_matrices: dict[str, ExecutionMatrix] = {}
    for problem in state.corpus.problems:
        pid = problem.id
        cands = list(state.candidates.get(pid, []))
        tests = list(state.tests.get(pid, []))
        gen = state.matrices[pid]["generated"]
        judge = state.matrices[pid]["ground_truth"]
        if ablation == "dedup":
            cands, tests = deduplicate(cands, tests, True, True)
        elif ablation == "trivial":
            outputs = state.outputs.get(pid, {})
            probes = extract_call_inputs(tests, problem.entry_point)
            stdio = problem.io_mode is IoMode.STDIO
            cands = [
                c
                for c in cands
                if not trivial_from_outputs(
                    outputs.get(c.id, ()), probes, stdio=stdio
                )
            ]
        elif ablation == "example-filter":
            example = state.matrices[pid].get("example")
            if example is not None:
                cands = [
                    c
                    for c in cands
                    if len(example.pass_set(c.id)) == len(example.test_ids)
                ]
        cid_list = [c.id for c in cands]
        tid_list = [tc.id for tc in tests if tc.id in set(gen.test_ids)]
        candidates[pid] = cands
        gen_matrices[pid] = gen.restrict(cid_list, tid_list)
        judge_matrices[pid] = judge.restrict(cid_list, None)
    return candidates, gen_matrices, judge_matrices


def stage_evaluate(state: RunState, manifest: RunManifest, run_dir: Path) -> dict:
    report_path = run_dir / "report.json"
    mhash = manifest.content_hash()
    if _artifact_fresh(report_path, mhash):
        log.info("report artifact fresh; skipping evaluation")
        report = json.loads(report_path.read_text(encoding="utf-8"))
        if manifest.figures:
            from .figures import render_figures

            render_figures(report, run_dir)
        return report

    ungraded = [p.id for p in state.corpus.problems if not p.ground_truth_tests]
    if ungraded:
        raise PipelineError(
            "evaluation", f"problems without ground-truth tests: {ungraded}"
        )

    base_candidates = {p.id: state.candidates.get(p.id, []) for p in state.corpus.problems}
    base_gen = {p.id: state.matrices[p.id]["generated"] for p in state.corpus.problems}
    base_judge = {p.id: state.matrices[p.id]["ground_truth"] for p in state.corpus.problems}

    tables, base_aggregate = _pass_table(
        state, manifest, base_candidates, base_gen, base_judge
    )

    # Test quality from the precomputed canonical row.
    quality_per_problem: dict[str, dict] = {}
    accuracies: list[float] = []
    toxicities: list[float] = []
    for problem in state.corpus.problems:
        pid = problem.id
        quality = state.matrices[pid].get("quality")
        gen = state.matrices[pid]["generated"]
        entry: dict[str, Optional[float]] = {"accuracy": None, "toxicity_rate": None}
        if quality is not None and quality.test_ids:
            canonical_passes = quality.pass_set(CANONICAL_ID)
            entry["accuracy"] = len(canonical_passes) / len(quality.test_ids)
            toxic = 0
            for tid in quality.test_ids:
                if tid in canonical_passes:
                    continue
                j = gen.test_ids.index(tid)
                if any(row[j].passed for row in gen.verdicts):
                    toxic += 1
            entry["toxicity_rate"] = toxic / len(quality.test_ids)
            accuracies.append(entry["accuracy"])
            toxicities.append(entry["toxicity_rate"])
        quality_per_problem[pid] = entry

    # Consensus-set distribution stats from the dual exhaustive grouping.
    sets_per_problem = {}
    for problem in state.corpus.problems:
        ordered = score_sets(
            group_by_functionality(base_gen[problem.id]), manifest.ranker
        )
        sets_per_problem[problem.id] = ordered
    stats = consensus_stats(sets_per_problem)

    ablation_deltas: dict[str, dict] = {}
    for ablation in manifest.ablations:
        filt_candidates, filt_gen, filt_judge = _apply_ablation(state, manifest, ablation)
        _, ablated_aggregate = _pass_table(
            state, manifest, filt_candidates, filt_gen, filt_judge
        )
        ablation_deltas[ablation] = {
            name: {
                kk: ablated_aggregate[name][kk] - base_aggregate[name][kk]
                for kk in ablated_aggregate[name]
            }
            for name in manifest.rankers
        }

    per_problem = {}
    for problem in state.corpus.problems:
        pid = problem.id
        judge = base_judge[pid]
        per_problem[pid] = {
            "pass_at_k": tables["per_problem"][pid],
            "chosen": tables["chosen"][pid],
            "consensus": stats["per_problem"][pid],
            "n_candidates": len(base_candidates[pid]),
            "n_tests": len(base_gen[pid].test_ids),
            "n_correct": len(correct_candidate_ids(judge)) if base_candidates[pid] else 0,
            "test_quality": quality_per_problem[pid],
        }

    aggregate = {
        "pass_at_k": base_aggregate,
        "problems": len(state.corpus.problems),
        "consensus": stats["aggregate"],
        "test_quality": {
            "counted_problems": len(accuracies),
            "accuracy_mean": statistics.mean(accuracies) if accuracies else None,
            "accuracy_median": statistics.median(accuracies) if accuracies else None,
            "toxicity_mean": statistics.mean(toxicities) if toxicities else None,
            "toxicity_median": statistics.median(toxicities) if toxicities else None,
        },
        "ablation_deltas": ablation_deltas,
        "coverage": None,
    }
    report = {
        "_manifest_hash": mhash,
        "aggregate": aggregate,
        "per_problem": per_problem,
    }
    report_path.write_text(_dump_json(report), encoding="utf-8")
    _write_csvs(report, manifest, run_dir)
    if manifest.figures:
        from .figures import render_figures

        render_figures(report, run_dir)
    return report


def _write_csvs(report: dict, manifest: RunManifest, run_dir: Path) -> None:
    with (run_dir / "per_problem.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["problem_id", "ranker", "k", "value"])
        for pid in sorted(report["per_problem"]):
            entry = report["per_problem"][pid]
            for ranker in manifest.rankers:
                for k in manifest.k_list:
                    writer.writerow(
                        [pid, ranker, k, entry["pass_at_k"][ranker][str(k)]]
                    )
    with (run_dir / "distributions.csv").open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["problem_id", "accuracy", "toxicity_rate", "set_count", "top_set_size"]
        )
        for pid in sorted(report["per_problem"]):
            entry = report["per_problem"][pid]
            tq = entry["test_quality"]
            writer.writerow(
                [
                    pid,
                    "" if tq["accuracy"] is None else tq["accuracy"],
                    "" if tq["toxicity_rate"] is None else tq["toxicity_rate"],
                    entry["consensus"]["set_count"],
                    entry["consensus"]["top_set_size"],
                ]
            )


# --------------------------------------------------------------------------
# Whole pipeline
# --------------------------------------------------------------------------

def prepare_corpus(
    manifest: RunManifest,
    strip: bool = False,
    io_mode: Optional[str] = None,
    matchers: Optional[list] = None,
) -> Corpus:
    from dataclasses import replace as dc_replace

    from .corpus import DEFAULT_MATCHERS, strip_examples

    try:
        corpus = load_corpus(manifest.corpus_path)
    except CorpusError as exc:
        raise PipelineError("config", str(exc)) from exc
    if io_mode:
        corpus.problems = [
            dc_replace(p, io_mode=IoMode(io_mode)) for p in corpus.problems
        ]
    if strip:
        stripped_problems = []
        for p in corpus.problems:
            context, examples = strip_examples(
                p.context, matchers or DEFAULT_MATCHERS, entry_point=p.entry_point
            )
            stripped_problems.append(
                dc_replace(
                    p,
                    context=context,
                    example_tests=tuple(examples) if examples else p.example_tests,
                )
            )
        corpus.problems = stripped_problems
    return corpus


def run_pipeline(
    manifest: RunManifest,
    run_dir: str | Path,
    provider: Optional[Provider] = None,
    strip_examples: bool = False,
    io_mode: Optional[str] = None,
    matchers: Optional[list] = None,
    gen_concurrency: int = 4,
) -> dict:
    """Execute all stages, reusing any artifact stamped with the same hash."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    corpus = prepare_corpus(
        manifest, strip=strip_examples, io_mode=io_mode, matchers=matchers
    )
    state = RunState(corpus=corpus)
    (run_dir / "manifest.json").write_text(
        _dump_json({"_manifest_hash": manifest.content_hash(), **manifest.to_json()}),
        encoding="utf-8",
    )
    stage_generate(state, manifest, run_dir, provider, concurrency=gen_concurrency)
    stage_execute(state, manifest, run_dir)
    stage_rank(state, manifest, run_dir)
    return stage_evaluate(state, manifest, run_dir)
