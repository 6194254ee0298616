"""Aggregate learning-record CSVs in an archive into mean/std curves."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from ..transfer import LearningRecord


def find_curves(archive: str | Path) -> dict[str, list[Path]]:
    """Learning-record CSVs grouped by their directory relative to ``archive``."""
    root = Path(archive)
    if not root.is_dir():
        raise FileNotFoundError(f"archive directory not found: {root}")
    groups: dict[str, list[Path]] = {}
    for path in sorted(root.rglob("*.csv")):
        with open(path, newline="") as fh:
            header = fh.readline().strip().split(",")
        if tuple(header) != LearningRecord.HEADER:
            continue
        rel = path.parent.relative_to(root).as_posix() or "."
        groups.setdefault(rel, []).append(path)
    return groups


def aggregate(archive: str | Path, every: int = 1) -> str:
    """CSV with one row per (curve group, episode): mean and std of the episode
    return and of the cumulative return across the group's records.
    Records of unequal length are truncated to the shortest.
    """
    if every < 1:
        raise ValueError("every must be >= 1")
    groups = find_curves(archive)
    if not groups:
        raise ValueError(f"no learning records under {archive}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["group", "episode", "n", "mean_return", "std_return", "mean_cumulative", "std_cumulative"])
    for name, paths in groups.items():
        recs = [LearningRecord.read_csv(p).raw_return for p in paths]
        length = min(len(r) for r in recs)
        raw = np.array([r[:length] for r in recs])
        cum = np.cumsum(raw, axis=1)
        for e in range(0, length, every):
            w.writerow([name, e, len(recs), repr(float(raw[:, e].mean())), repr(float(raw[:, e].std())),
                        repr(float(cum[:, e].mean())), repr(float(cum[:, e].std()))])
    return buf.getvalue()
