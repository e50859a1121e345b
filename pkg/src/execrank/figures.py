"""Render report distributions as figures next to the delimited output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _hist(values, title, xlabel, out_path, bins=10, color="#4878b0"):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(values, bins=bins, color=color, edgecolor="white")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("problems")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def render_figures(report: dict, out_dir: str | Path) -> list[Path]:
    """Write distribution histograms for one evaluation report.

    Produces test-accuracy and toxicity distributions plus consensus-set
    count and top-set size histograms. Problems without a canonical
    solution are absent from the quality plots.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    per_problem = report["per_problem"]
    accuracy = [
        e["test_quality"]["accuracy"]
        for e in per_problem.values()
        if e["test_quality"]["accuracy"] is not None
    ]
    toxicity = [
        e["test_quality"]["toxicity_rate"]
        for e in per_problem.values()
        if e["test_quality"]["toxicity_rate"] is not None
    ]
    set_counts = [e["consensus"]["set_count"] for e in per_problem.values()]
    top_sizes = [e["consensus"]["top_set_size"] for e in per_problem.values()]

    written: list[Path] = []
    jobs = [
        (accuracy, "Generated test accuracy", "accuracy", "test_accuracy.png", "#4878b0"),
        (toxicity, "Generated test toxicity", "toxicity rate", "test_toxicity.png", "#d1615d"),
        (set_counts, "Consensus sets per problem", "set count", "consensus_counts.png", "#6aa56e"),
        (top_sizes, "Top consensus-set size", "solutions in top set", "top_set_sizes.png", "#b8860b"),
    ]
    for values, title, xlabel, name, color in jobs:
        if not values:
            continue
        path = out_dir / name
        _hist(values, title, xlabel, path, color=color)
        written.append(path)
    return written
