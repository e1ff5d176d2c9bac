"""Optional chart rendering for CLI reports.

matplotlib is imported lazily with the Agg backend so the library stays
importable on headless machines and in processes that never plot.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _barh(path: Path, labels: Sequence[str], values: Sequence[float], title: str, xlabel: str) -> Path:
    plt = _pyplot()
    height = max(2.0, 0.5 * len(labels) + 1.0)
    fig, ax = plt.subplots(figsize=(8, height))
    pos = range(len(labels))
    ax.barh(pos, values, color="#4878a8")
    ax.set_yticks(pos, labels=labels)
    ax.invert_yaxis()  # best first, top to bottom
    ax.set_xlabel(xlabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def write_score_figure(directory: Path, entries: Sequence[tuple[str, float]]) -> Path:
    """Bar chart of candidate comparison scores, best first."""
    directory.mkdir(parents=True, exist_ok=True)
    labels = [label for label, _ in entries]
    values = [value for _, value in entries]
    return _barh(
        directory / "candidate_scores.png",
        labels,
        values,
        "Candidate comparison scores",
        "score",
    )


def write_similarity_figure(directory: Path, entries: Sequence[tuple[str, float]]) -> Path:
    """Bar chart of validated state-delta similarities, best first."""
    directory.mkdir(parents=True, exist_ok=True)
    labels = [label for label, _ in entries]
    values = [value for _, value in entries]
    return _barh(
        directory / "validation_similarity.png",
        labels,
        values,
        "Validated state-delta similarity",
        "similarity",
    )


def write_weight_figure(
    directory: Path,
    lowest: Sequence[tuple[str, float]],
    highest: Sequence[tuple[str, float]],
) -> Path:
    """Two-panel chart of the lightest and heaviest syscall weights."""
    directory.mkdir(parents=True, exist_ok=True)
    plt = _pyplot()
    rows = max(len(lowest), len(highest), 1)
    fig, (ax_low, ax_high) = plt.subplots(
        1, 2, figsize=(11, max(2.0, 0.5 * rows + 1.0))
    )
    for ax, entries, title in (
        (ax_low, lowest, "Lowest-weight syscalls"),
        (ax_high, highest, "Highest-weight syscalls"),
    ):
        labels = [name for name, _ in entries]
        values = [w for _, w in entries]
        pos = range(len(labels))
        ax.barh(pos, values, color="#4878a8")
        ax.set_yticks(pos, labels=labels)
        ax.invert_yaxis()
        ax.set_xlabel("weight")
        ax.set_title(title)
    fig.tight_layout()
    out = directory / "syscall_weights.png"
    fig.savefig(out)
    plt.close(fig)
    return out
