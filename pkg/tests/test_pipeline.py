import json
import statistics

import pytest

from execrank.cli import main

from conftest import SYN_CORPUS, SYN_REPLAY, SYN_TABLE, TOY_CORPUS, TOY_REPLAY, TOY_TABLE


def toy_args(run_dir, *extra, seed=7, jobs=4):
    return [
        "run",
        "--corpus", str(TOY_CORPUS),
        "--run-dir", str(run_dir),
        "--replay", str(TOY_REPLAY),
        "--n-solutions", "6",
        "--n-tests", "2",
        "--backend", "fake_table",
        "--fake-table", str(TOY_TABLE),
        "--seed", str(seed),
        "--jobs", str(jobs),
        *extra,
    ]


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("toyrun")
    code = main(
        toy_args(
            run_dir,
            "--rankers", "baseline,dual,solutions_only,tests_only,random,alphacode_cluster",
            "--k", "1,2",
            "--ablations", "dedup,trivial,example-filter",
        )
    )
    assert code == 0
    return run_dir


def read_report(run_dir):
    return json.loads((run_dir / "report.json").read_text())


def test_run_produces_all_artifacts(toy_run):
    for name in (
        "manifest.json",
        "candidates.jsonl",
        "tests.jsonl",
        "matrix.jsonl",
        "ranking.json",
        "report.json",
        "per_problem.csv",
        "distributions.csv",
    ):
        assert (toy_run / name).exists(), name


def test_report_figures_rendered(toy_run):
    for name in (
        "test_accuracy.png",
        "test_toxicity.png",
        "consensus_counts.png",
        "top_set_sizes.png",
    ):
        assert (toy_run / name).exists(), name


def test_artifacts_carry_manifest_hash(toy_run):
    manifest = json.loads((toy_run / "manifest.json").read_text())
    mhash = manifest["manifest_hash"]
    for name, jsonl in (
        ("candidates.jsonl", True),
        ("tests.jsonl", True),
        ("matrix.jsonl", True),
        ("ranking.json", False),
        ("report.json", False),
    ):
        text = (toy_run / name).read_text()
        head = json.loads(text.splitlines()[0]) if jsonl else json.loads(text)
        assert head["_manifest_hash"] == mhash, name


def test_dual_beats_random_on_toy(toy_run):
    agg = read_report(toy_run)["aggregate"]["pass_at_k"]
    assert agg["dual"]["1"] == 1.0
    assert agg["dual"]["1"] > agg["baseline"]["1"]


def test_aggregate_is_mean_of_per_problem(toy_run):
    report = read_report(toy_run)
    for ranker, by_k in report["aggregate"]["pass_at_k"].items():
        for k, value in by_k.items():
            values = [
                entry["pass_at_k"][ranker][k]
                for entry in report["per_problem"].values()
            ]
            assert value == pytest.approx(statistics.mean(values)), (ranker, k)
    quality = [
        e["test_quality"]["accuracy"]
        for e in report["per_problem"].values()
        if e["test_quality"]["accuracy"] is not None
    ]
    assert report["aggregate"]["test_quality"]["accuracy_mean"] == pytest.approx(
        statistics.mean(quality)
    )


def test_report_reserves_coverage_field(toy_run):
    assert read_report(toy_run)["aggregate"]["coverage"] is None


def test_ablation_deltas_present_and_plausible(toy_run):
    deltas = read_report(toy_run)["aggregate"]["ablation_deltas"]
    assert set(deltas) == {"dedup", "trivial", "example-filter"}
    # Removing trivial/junk candidates can only help the random baseline.
    assert deltas["trivial"]["baseline"]["1"] >= 0
    assert deltas["example-filter"]["baseline"]["1"] >= 0
    # The consensus ranker already solves every toy problem.
    assert deltas["dedup"]["dual"]["1"] == 0.0


def test_ranking_chosen_consistent_with_report(toy_run):
    ranking = json.loads((toy_run / "ranking.json").read_text())
    report = read_report(toy_run)
    for pid, entry in ranking["problems"].items():
        assert entry["chosen"] == report["per_problem"][pid]["chosen"]["dual"]
        scores = [s["score"] for s in entry["sets"]]
        assert scores == sorted(scores, reverse=True)


def test_per_problem_csv_row_count(toy_run):
    rows = (toy_run / "per_problem.csv").read_text().strip().splitlines()
    # header + problems x rankers x k
    assert len(rows) == 1 + 5 * 6 * 2


def test_rerun_same_dir_is_byte_identical(toy_run):
    before = (toy_run / "report.json").read_bytes()
    code = main(
        toy_args(
            toy_run,
            "--rankers", "baseline,dual,solutions_only,tests_only,random,alphacode_cluster",
            "--k", "1,2",
            "--ablations", "dedup,trivial,example-filter",
        )
    )
    assert code == 0
    assert (toy_run / "report.json").read_bytes() == before


def test_changed_seed_invalidates_cache(toy_run, tmp_path):
    run_dir = tmp_path / "reseeded"
    import shutil

    shutil.copytree(toy_run, run_dir)
    code = main(toy_args(run_dir, "--rankers", "baseline,dual", "--k", "1", seed=8))
    assert code == 0
    first = json.loads((run_dir / "manifest.json").read_text())["manifest_hash"]
    second = json.loads((toy_run / "manifest.json").read_text())["manifest_hash"]
    assert first != second


def test_stage_subcommands_match_run(tmp_path):
    staged = tmp_path / "staged"
    common = [
        "--corpus", str(TOY_CORPUS),
        "--run-dir", str(staged),
        "--replay", str(TOY_REPLAY),
        "--n-solutions", "6",
        "--n-tests", "2",
        "--seed", "7",
    ]
    exec_opts = ["--backend", "fake_table", "--fake-table", str(TOY_TABLE)]
    assert main(["generate-solutions", *common]) == 0
    assert main(["generate-tests", *common]) == 0
    assert main(["execute", *common, *exec_opts]) == 0
    assert main(["rank", *common, *exec_opts]) == 0
    assert main(["evaluate", *common, *exec_opts, "--k", "1,2", "--no-figures"]) == 0

    oneshot = tmp_path / "oneshot"
    assert main(toy_args(oneshot, "--k", "1,2", "--no-figures", seed=7)) == 0
    assert (staged / "report.json").read_bytes() == (oneshot / "report.json").read_bytes()
    assert (staged / "ranking.json").read_bytes() == (oneshot / "ranking.json").read_bytes()


def test_missing_replay_key_aborts_with_generation_exit(tmp_path):
    empty_replay = tmp_path / "empty_replay"
    empty_replay.mkdir()
    code = main(toy_args(tmp_path / "run", "--replay", str(empty_replay)))
    assert code == 3


def test_incomplete_fake_table_aborts_with_execution_exit(tmp_path):
    truncated = tmp_path / "table.jsonl"
    lines = TOY_TABLE.read_text().splitlines()
    truncated.write_text("\n".join(lines[:3]) + "\n")
    code = main(toy_args(tmp_path / "run", "--fake-table", str(truncated)))
    assert code == 4


def test_unknown_ranker_is_config_error(tmp_path):
    code = main(toy_args(tmp_path / "run", "--rankers", "baseline,bogus"))
    assert code == 2


def test_missing_corpus_is_config_error(tmp_path):
    code = main(
        [
            "run",
            "--corpus", str(tmp_path / "nope.jsonl"),
            "--run-dir", str(tmp_path / "run"),
            "--backend", "fake_table",
            "--fake-table", str(TOY_TABLE),
        ]
    )
    assert code == 2


def test_rank_without_execute_is_config_error(tmp_path):
    code = main(
        [
            "rank",
            "--corpus", str(TOY_CORPUS),
            "--run-dir", str(tmp_path / "fresh"),
            "--backend", "fake_table",
            "--fake-table", str(TOY_TABLE),
        ]
    )
    assert code == 2


def test_synthetic_run_directional(tmp_path):
    run_dir = tmp_path / "syn"
    code = main(
        [
            "run",
            "--corpus", str(SYN_CORPUS),
            "--run-dir", str(run_dir),
            "--replay", str(SYN_REPLAY),
            "--n-solutions", "8",
            "--n-tests", "2",
            "--backend", "fake_table",
            "--fake-table", str(SYN_TABLE),
            "--rankers", "baseline,dual,solutions_only,tests_only",
            "--k", "1",
            "--seed", "3",
            "--no-figures",
        ]
    )
    assert code == 0
    agg = read_report(run_dir)["aggregate"]["pass_at_k"]
    assert agg["dual"]["1"] > agg["baseline"]["1"]
    assert agg["dual"]["1"] > agg["solutions_only"]["1"]
    assert agg["dual"]["1"] > agg["tests_only"]["1"]


def test_ransac_method_matches_exhaustive_on_toy(tmp_path):
    exhaustive = tmp_path / "ex"
    sampled = tmp_path / "ra"
    base = ["--rankers", "dual", "--k", "1", "--no-figures"]
    assert main(toy_args(exhaustive, *base)) == 0
    assert main(toy_args(sampled, *base, "--method", "ransac", "--iterations", "5000")) == 0
    ex_ranking = json.loads((exhaustive / "ranking.json").read_text())
    ra_ranking = json.loads((sampled / "ranking.json").read_text())
    for pid, entry in ex_ranking["problems"].items():
        ex_nonempty = [s for s in entry["sets"] if s["tests"]]
        ra_sets = ra_ranking["problems"][pid]["sets"]
        assert [s["solutions"] for s in ra_sets] == [s["solutions"] for s in ex_nonempty]
        assert ra_ranking["problems"][pid]["chosen"][0] in ex_nonempty[0]["solutions"]


def syn_args(run_dir, *extra):
    return [
        "--corpus", str(SYN_CORPUS),
        "--run-dir", str(run_dir),
        "--replay", str(SYN_REPLAY),
        "--n-solutions", "8",
        "--n-tests", "2",
        "--backend", "fake_table",
        "--fake-table", str(SYN_TABLE),
        "--k", "1",
        "--no-figures",
        *extra,
    ]


def test_alphacode_without_output_records_is_execution_exit(tmp_path):
    # The synthetic fake table ships verdicts but no captured outputs, so
    # the execution stage cannot satisfy the clustering ranker.
    code = main(["run", *syn_args(tmp_path / "run", "--rankers", "alphacode_cluster")])
    assert code == 4


def test_evaluate_stage_missing_outputs_is_evaluation_exit(tmp_path):
    # Execute without the clustering ranker, then ask evaluate for it: the
    # matrix artifact carries no output records, failing the evaluate stage.
    run_dir = tmp_path / "run"
    assert main(["run", *syn_args(run_dir, "--rankers", "baseline,dual")]) == 0
    code = main(["evaluate", *syn_args(run_dir, "--rankers", "alphacode_cluster")])
    assert code == 5


def test_strip_examples_via_prepare_corpus(tmp_path):
    import json as _json

    from execrank.pipeline import RunManifest, prepare_corpus, sha256_file
    from execrank.consensus import RankerConfig
    from execrank.genclient import GenerationConfig
    from execrank.sandbox import ExecPolicy

    corpus_path = tmp_path / "mini.jsonl"
    context = (
        "def double(x):\n"
        '    """Double it.\n'
        "    >>> double(2)\n"
        "    4\n"
        '    """\n'
    )
    corpus_path.write_text(
        _json.dumps(
            {
                "id": "m0",
                "context": context,
                "entry_point": "double",
                "io_mode": "assertion",
                "ground_truth_tests": [
                    {"kind": "assertion", "assertion": "assert double(3) == 6"}
                ],
            }
        )
        + "\n"
    )
    manifest = RunManifest(
        corpus_path=str(corpus_path),
        corpus_sha256=sha256_file(corpus_path),
        generation=GenerationConfig(),
        policy=ExecPolicy(backend="fake_table"),
        ranker=RankerConfig(),
    )
    corpus = prepare_corpus(manifest, strip=True)
    problem = corpus.problems[0]
    assert ">>>" not in problem.context
    assert [tc.assertion for tc in problem.example_tests] == ["assert double(2) == 4"]


def test_example_matchers_flag_parses(tmp_path):
    import json as _json

    from execrank.cli import build_parser

    matcher_file = tmp_path / "matchers.json"
    matcher_file.write_text(_json.dumps([{"kind": "doctest", "prompt": ">> "}]))
    args = build_parser().parse_args(
        [
            "run",
            "--corpus", str(TOY_CORPUS),
            "--run-dir", str(tmp_path / "r"),
            "--strip-examples",
            "--example-matchers", str(matcher_file),
        ]
    )
    from execrank.cli import _matchers_from_args

    matchers = _matchers_from_args(args)
    assert matchers is not None
    assert matchers[0].prompt == ">> "


def test_problem_without_ground_truth_fails_evaluation(tmp_path):
    import json as _json

    corpus_path = tmp_path / "nogt.jsonl"
    corpus_path.write_text(
        _json.dumps(
            {
                "id": "n0",
                "context": "def f(x):\n    pass\n",
                "entry_point": "f",
                "io_mode": "assertion",
                "ground_truth_tests": [],
            }
        )
        + "\n"
    )
    (tmp_path / "nogt.candidates.jsonl").write_text(
        _json.dumps(
            {"problem_id": "n0", "id": "s0", "body": "    return x\n", "sample_index": 0}
        )
        + "\n"
    )
    (tmp_path / "nogt.tests.jsonl").write_text(
        _json.dumps(
            {"problem_id": "n0", "kind": "assertion", "assertion": "assert f(1) == 1"}
        )
        + "\n"
    )
    table = tmp_path / "table.jsonl"
    table.write_text(
        _json.dumps(
            {
                "problem_id": "n0",
                "kind": "generated",
                "solution_ids": ["s0"],
                "test_ids": ["g0"],
                "verdicts": [[{"outcome": "pass", "wall_time": 0.0}]],
            }
        )
        + "\n"
    )
    code = main(
        [
            "run",
            "--corpus", str(corpus_path),
            "--run-dir", str(tmp_path / "run"),
            "--backend", "fake_table",
            "--fake-table", str(table),
            "--k", "1",
            "--no-figures",
        ]
    )
    assert code == 5


def test_figures_render_on_cached_report(tmp_path):
    run_dir = tmp_path / "run"
    base = ["--rankers", "baseline,dual", "--k", "1"]
    assert main(toy_args(run_dir, *base, "--no-figures")) == 0
    assert not (run_dir / "consensus_counts.png").exists()
    # Same manifest content: evaluation reuses the report but still honors
    # the figure request.
    assert main(toy_args(run_dir, *base, "--figures")) == 0
    assert (run_dir / "consensus_counts.png").exists()
