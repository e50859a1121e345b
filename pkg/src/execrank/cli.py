"""Command-line interface wiring the pipeline stages.

Subcommands mirror the stages (``generate-solutions``, ``generate-tests``,
``execute``, ``rank``, ``evaluate``) plus ``run`` for all of them with
content-addressed artifact reuse. Exit codes: 0 success, 2 configuration,
3 generation, 4 execution, 5 evaluation/ranking.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .consensus import RankerConfig, Scoring, TieBreak
from .corpus import CorpusError
from .genclient import GenerationConfig, GenerationError, Provider
from .pipeline import (
    ABLATION_NAMES,
    RANKER_NAMES,
    PipelineError,
    RunManifest,
    RunState,
    run_pipeline,
    sha256_file,
    stage_evaluate,
    stage_execute,
    stage_generate,
    stage_rank,
    load_generated_artifacts,
    load_matrix_artifacts,
    prepare_corpus,
)
from .sandbox import Backend, ExecPolicy, SandboxError

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GENERATION = 3
EXIT_EXECUTION = 4
EXIT_EVALUATION = 5

_STAGE_EXIT = {
    "config": EXIT_CONFIG,
    "generation": EXIT_GENERATION,
    "execution": EXIT_EXECUTION,
    "ranking": EXIT_EVALUATION,
    "evaluation": EXIT_EVALUATION,
}


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(",") if part.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="execrank",
        description="Rank sampled code solutions by execution consensus "
        "over generated tests, and evaluate pass@k.",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--run-dir", required=True, help="artifact directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=4, help="parallel workers")

    corpus_args = argparse.ArgumentParser(add_help=False)
    corpus_args.add_argument("--corpus", required=True, help="problem JSONL file")
    corpus_args.add_argument(
        "--io-mode", choices=["assertion", "stdio"], default=None,
        help="override the io_mode of every problem",
    )
    strip = corpus_args.add_mutually_exclusive_group()
    strip.add_argument(
        "--strip-examples", dest="strip_examples", action="store_true",
        help="remove example I/O blocks from contexts, keeping them as "
        "example tests",
    )
    strip.add_argument(
        "--keep-examples", dest="strip_examples", action="store_false"
    )
    corpus_args.set_defaults(strip_examples=False)
    corpus_args.add_argument(
        "--example-matchers", default=None,
        help="JSON file describing how example I/O blocks are delimited "
        "in this corpus (list of matcher objects); default: doctest style",
    )

    gen_args = argparse.ArgumentParser(add_help=False)
    gen_args.add_argument("--temperature", type=float, default=0.8)
    gen_args.add_argument("--top-p", type=float, default=0.95)
    gen_args.add_argument("--max-tokens", type=int, default=300)
    gen_args.add_argument("--n-solutions", type=int, default=100)
    gen_args.add_argument("--n-tests", type=int, default=100)
    gen_args.add_argument("--assert-limit", type=int, default=5)
    gen_args.add_argument(
        "--greedy", action="store_true",
        help="temperature-0 single-sample baseline preset",
    )
    gen_args.add_argument("--replay", default=None, help="replay directory")
    gen_args.add_argument(
        "--record", action="store_true",
        help="record provider responses into the replay directory",
    )
    gen_args.add_argument("--gen-concurrency", type=int, default=4)

    exec_args = argparse.ArgumentParser(add_help=False)
    exec_args.add_argument(
        "--backend", choices=["shim", "fake_table"], default="shim"
    )
    exec_args.add_argument(
        "--fake-table", default=None, help="verdict table JSONL for fake_table"
    )
    exec_args.add_argument("--shim", default=None, help="runner shim script path")
    exec_args.add_argument("--timeout", type=float, default=0.1)
    exec_args.add_argument("--memory-limit", type=int, default=None)

    rank_args = argparse.ArgumentParser(add_help=False)
    rank_args.add_argument(
        "--scoring",
        choices=["dual", "solutions_only", "tests_only", "random"],
        default="dual",
    )
    rank_args.add_argument("--alpha", type=float, default=0.5)
    rank_args.add_argument(
        "--tie-break",
        choices=["larger_tests_first", "lexicographic_id"],
        default="larger_tests_first",
    )
    rank_args.add_argument(
        "--method", choices=["exhaustive", "ransac"], default="exhaustive"
    )
    rank_args.add_argument(
        "--iterations", type=int, default=None,
        help="sampling budget for --method ransac (default 10*N*M)",
    )
    rank_args.add_argument(
        "--k", dest="k_list", type=_int_list, default=(1, 2),
        help="comma list of k values; selections cover the largest",
    )

    eval_args = argparse.ArgumentParser(add_help=False)
    eval_args.add_argument(
        "--rankers", type=_str_list, default=("baseline", "dual"),
        help=f"comma list from {','.join(RANKER_NAMES)}",
    )
    eval_args.add_argument(
        "--ablations", type=_str_list, default=(),
        help=f"comma list from {','.join(ABLATION_NAMES)}",
    )
    figures = eval_args.add_mutually_exclusive_group()
    figures.add_argument("--figures", dest="figures", action="store_true")
    figures.add_argument("--no-figures", dest="figures", action="store_false")
    eval_args.set_defaults(figures=True)

    sub.add_parser(
        "generate-solutions", parents=[common, corpus_args, gen_args],
        help="sample and post-process solution candidates",
    )
    sub.add_parser(
        "generate-tests", parents=[common, corpus_args, gen_args],
        help="sample and post-process test cases",
    )
    sub.add_parser(
        "execute", parents=[common, corpus_args, gen_args, exec_args],
        help="execute all (candidate, test) pairs into matrix.jsonl",
    )
    sub.add_parser(
        "rank", parents=[common, corpus_args, gen_args, exec_args, rank_args],
        help="rank consensus sets and select top-k solutions",
    )
    sub.add_parser(
        "evaluate",
        parents=[common, corpus_args, gen_args, exec_args, rank_args, eval_args],
        help="compute pass@k, test quality, and ablations into report.json",
    )
    sub.add_parser(
        "run",
        parents=[common, corpus_args, gen_args, exec_args, rank_args, eval_args],
        help="all stages with content-addressed artifact reuse",
    )
    return parser


def _manifest_from_args(args: argparse.Namespace) -> RunManifest:
    corpus_path = Path(args.corpus)
    if not corpus_path.exists():
        raise PipelineError("config", f"corpus file not found: {corpus_path}")
    if args.greedy:
        generation = GenerationConfig.greedy(
            top_p=args.top_p,
            max_tokens=args.max_tokens,
            n_test_samples=args.n_tests,
            assert_limit=args.assert_limit,
        )
    else:
        generation = GenerationConfig(
            temperature=args.temperature,
            top_p=args.top_p,
            max_tokens=args.max_tokens,
            n_solution_samples=args.n_solutions,
            n_test_samples=args.n_tests,
            assert_limit=args.assert_limit,
        )
    backend = Backend(getattr(args, "backend", "shim"))
    policy = ExecPolicy(
        timeout_per_test=getattr(args, "timeout", 0.1),
        max_parallel_workers=args.jobs,
        memory_limit=getattr(args, "memory_limit", None),
        backend=backend,
    )
    ranker = RankerConfig(
        scoring=Scoring(getattr(args, "scoring", "dual")),
        alpha=getattr(args, "alpha", 0.5),
        tie_break=TieBreak(getattr(args, "tie_break", "larger_tests_first")),
        seed=args.seed,
    )
    rankers = tuple(getattr(args, "rankers", ("baseline", "dual")))
    unknown = [r for r in rankers if r not in RANKER_NAMES]
    if unknown:
        raise PipelineError("config", f"unknown rankers: {unknown}")
    ablations = tuple(getattr(args, "ablations", ()))
    unknown = [a for a in ablations if a not in ABLATION_NAMES]
    if unknown:
        raise PipelineError("config", f"unknown ablations: {unknown}")
    k_list = tuple(getattr(args, "k_list", (1, 2)))
    if not k_list or any(k < 1 for k in k_list):
        raise PipelineError("config", f"invalid k list: {k_list}")
    fake_table = getattr(args, "fake_table", None)
    executes = args.command in ("execute", "run")
    if executes and backend is Backend.FAKE_TABLE and not fake_table:
        raise PipelineError("config", "--backend fake_table requires --fake-table")
    return RunManifest(
        corpus_path=str(corpus_path),
        corpus_sha256=sha256_file(corpus_path),
        generation=generation,
        policy=policy,
        ranker=ranker,
        seed=args.seed,
        k_list=k_list,
        rankers=rankers,
        ablations=ablations,
        method=getattr(args, "method", "exhaustive"),
        iterations=getattr(args, "iterations", None),
        replay_dir=args.replay,
        fake_table_path=fake_table,
        fake_table_sha256=sha256_file(fake_table) if fake_table else None,
        shim_path=getattr(args, "shim", None),
        figures=getattr(args, "figures", False),
    )


def _provider_from_args(args: argparse.Namespace) -> Optional[Provider]:
    provider = Provider.from_env(replay_dir=args.replay, record=args.record)
    if provider.endpoint is None and provider.replay_dir is None:
        return None
    return provider


def _matchers_from_args(args: argparse.Namespace) -> Optional[list]:
    path = getattr(args, "example_matchers", None)
    if not path:
        return None
    from .corpus import ExampleMatcher

    try:
        specs = json.loads(Path(path).read_text(encoding="utf-8"))
        return [ExampleMatcher(**spec) for spec in specs]
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise PipelineError("config", f"bad --example-matchers file: {exc}") from exc


def _prepared_state(manifest: RunManifest, args: argparse.Namespace) -> RunState:
    corpus = prepare_corpus(
        manifest,
        strip=args.strip_examples,
        io_mode=args.io_mode,
        matchers=_matchers_from_args(args),
    )
    return RunState(corpus=corpus)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except PipelineError as exc:
        log.error("%s", exc)
        return _STAGE_EXIT.get(exc.stage, 1)
    except GenerationError as exc:
        log.error("generation failed: %s", exc)
        return EXIT_GENERATION
    except SandboxError as exc:
        log.error("execution failed: %s", exc)
        return EXIT_EXECUTION
    except CorpusError as exc:
        log.error("bad corpus: %s", exc)
        return EXIT_CONFIG


def _dispatch(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = _manifest_from_args(args)

    if args.command == "run":
        report = run_pipeline(
            manifest,
            run_dir,
            provider=_provider_from_args(args),
            strip_examples=args.strip_examples,
            io_mode=args.io_mode,
            matchers=_matchers_from_args(args),
            gen_concurrency=args.gen_concurrency,
        )
        agg = report["aggregate"]["pass_at_k"]
        for name in manifest.rankers:
            summary = ", ".join(
                f"pass@{k}={agg[name][str(k)]:.3f}" for k in manifest.k_list
            )
            print(f"{name}: {summary}")
        return EXIT_OK

    state = _prepared_state(manifest, args)
    if args.command in ("generate-solutions", "generate-tests"):
        which = "solutions" if args.command == "generate-solutions" else "tests"
        stage_generate(
            state,
            manifest,
            run_dir,
            _provider_from_args(args),
            concurrency=args.gen_concurrency,
            which=which,
        )
        name = "candidates.jsonl" if which == "solutions" else "tests.jsonl"
        print(f"wrote {run_dir / name}")
        return EXIT_OK

    # Remaining stages need generated artifacts in the run dir.
    cand_path = run_dir / "candidates.jsonl"
    tests_path = run_dir / "tests.jsonl"
    for path in (cand_path, tests_path):
        if not path.exists():
            raise PipelineError(
                "config", f"missing artifact {path}; run the generate stages first"
            )
    load_generated_artifacts(state, cand_path, tests_path)

    if args.command == "execute":
        stage_execute(state, manifest, run_dir)
        print(f"wrote {run_dir / 'matrix.jsonl'}")
        return EXIT_OK

    matrix_path = run_dir / "matrix.jsonl"
    if not matrix_path.exists():
        raise PipelineError(
            "config", f"missing artifact {matrix_path}; run execute first"
        )
    load_matrix_artifacts(state, matrix_path)
    missing = [
        p.id
        for p in state.corpus.problems
        if "generated" not in state.matrices.get(p.id, {})
    ]
    if missing:
        raise PipelineError(
            "config", f"matrix artifact lacks problems {missing}; re-run execute"
        )

    if args.command == "rank":
        ranking = stage_rank(state, manifest, run_dir)
        print(json.dumps({k: v for k, v in ranking.items() if k != "problems"}))
        return EXIT_OK

    if args.command == "evaluate":
        report = stage_evaluate(state, manifest, run_dir)
        print(f"wrote {run_dir / 'report.json'} ({report['aggregate']['problems']} problems)")
        return EXIT_OK

    raise PipelineError("config", f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
