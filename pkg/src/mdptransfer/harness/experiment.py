"""Experiment matrix: library sizes x (learner, source-set) cells x target tasks x trials."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from ..clustering import Clustering, CostParams, best_greedy, make_cost, save_clustering
from ..cluster_search import search_clusterings
from ..continual import (ContinualParams, RunArchive, TaskLibrary, continual_transfer,
                         metric_for_cost, run_learner, source_pol)
from ..mdp import StationaryPolicy, TabularMDP
from ..seeding import child_rng, child_seed
from .config import ConfigError, ExperimentConfig


def draw_tasks(cfg: ExperimentConfig, component: str, count: int) -> list[dict]:
    """Task parameter dicts for ``cfg.domain``, drawn from the stream named ``component``."""
    spec, stream = cfg.domain, cfg.stream
    rng = child_rng(cfg.seed, component)
    if stream.kind == "explicit":
        return [dict(stream.tasks[i % len(stream.tasks)]) for i in range(count)]
    out = []
    if spec.kind == "windy":
        for _ in range(count):
            goal = (int(rng.choice(stream.groups[int(rng.integers(len(stream.groups)))]))
                    if stream.kind == "grouped" else int(rng.integers(10)))
            out.append({"goal": goal, "wind": int(rng.integers(10))})
        return out
    if spec.kind in ("surveillance", "graph"):
        layout = spec.layout()
        for _ in range(count):
            if stream.kind == "grouped":
                pattern = stream.groups[int(rng.integers(len(stream.groups)))]
                targets = [int(layout.groups[g][int(rng.integers(len(layout.groups[g])))]) for g in pattern]
            else:
                targets = [int(t) for t in rng.choice(len(layout.vlocs), stream.n_targets, replace=False)]
            out.append({"targets": targets})
        return out
    raise ConfigError(f"domain kind {spec.kind!r} only supports explicit streams")


def build_tasks(cfg: ExperimentConfig, tasks: Sequence[dict]) -> list[TabularMDP]:
    return [cfg.domain.make(t) for t in tasks]


def cost_params(cfg: ExperimentConfig, library: TaskLibrary, upto: int) -> CostParams:
    return CostParams.for_library(library.mdps[:upto], cfg.clustering.cluster_t or cfg.transfer.t_horizon)


def select_sources(cfg: ExperimentConfig, mode: str, library: TaskLibrary, upto: int
                   ) -> tuple[list[StationaryPolicy], Clustering | None, float | None]:
    """Source policies for one cell, with the clustering and its cost when one was built."""
    if mode == "none":
        return [], None, None
    if mode == "sans":
        return library.policies[:upto], None, None
    if mode == "handpicked":
        return [library.policies[i] for i in cfg.handpicked if i < upto], None, None
    cl = cfg.clustering
    kind = metric_for_cost(cl.cost)
    dist = library.distances(kind, upto)
    params = cost_params(cfg, library, upto)
    if mode == "greedy":
        a, cost, _ = best_greedy(dist, make_cost(cl.cost, dist, params), cl.greedy_thresholds)
    else:
        res = search_clusterings(dist, cl.cost, params, t_m=cl.t_m, restarts=cl.restarts,
                                 theta1=cl.theta1, seed=child_seed(cfg.seed, "cluster", upto))
        a, cost = res.clustering, res.cost
    return source_pol(a, library, kind), a, cost


@dataclass
class CellRun:
    count: int
    learner: str
    mode: str
    task: int
    trial: int
    n_sources: int
    total: float
    final: float
    clipped: int


@dataclass
class MatrixResult:
    runs: list[CellRun] = field(default_factory=list)
    clusterings: dict[tuple[int, str], tuple[Clustering, float]] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def select(self, learner: str, mode: str) -> dict[int, list[CellRun]]:
        out: dict[int, list[CellRun]] = {}
        for r in self.runs:
            if r.learner == learner and r.mode == mode:
                out.setdefault(r.count, []).append(r)
        return out

    def mean_total(self, learner: str, mode: str) -> dict[int, float]:
        return {k: float(np.mean([r.total for r in v])) for k, v in self.select(learner, mode).items()}

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["count", "learner", "mode", "task", "trial", "n_sources", "total", "final", "clipped"])
        for r in self.runs:
            w.writerow([r.count, r.learner, r.mode, r.task, r.trial, r.n_sources, repr(r.total),
                        repr(r.final), r.clipped])
        return buf.getvalue()


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def trial_seed(cfg: ExperimentConfig, task: int, trial: int) -> int:
    """Shared by every cell and library size, so comparisons are paired."""
    return child_seed(cfg.seed, f"trial-{task}", trial)


def run_matrix(cfg: ExperimentConfig, out_dir: str | Path | None = None,
               log: Callable[[str], None] | None = None) -> MatrixResult:
    """Run every configured cell at every library size.

    Previous tasks are prefixes of one seeded stream, so larger libraries
    contain the smaller ones; target tasks come from an independent stream.
    """
    log = log or (lambda msg: None)
    n_prev = max(cfg.previous_counts)
    prev_tasks = draw_tasks(cfg, "previous", n_prev)
    target_tasks = draw_tasks(cfg, "targets", cfg.tasks_per_point)
    library = TaskLibrary(build_tasks(cfg, prev_tasks))
    targets = build_tasks(cfg, target_tasks)
    out = Path(out_dir) if out_dir is not None else None
    artifacts = {}

    def emit(rel: str, text: str):
        if out is None:
            return
        path = out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        artifacts[rel] = _sha(text)

    result = MatrixResult()
    sourceless = {}  # runs without sources do not depend on the library size
    for count in sorted(cfg.previous_counts):
        chosen = {}
        for learner, mode in cfg.cells:
            fresh = mode not in chosen
            if fresh:
                chosen[mode] = select_sources(cfg, mode, library, count)
            sources, a, cost = chosen[mode]
            if a is not None and fresh:
                result.clusterings[(count, mode)] = (a, cost)
                if out is not None:
                    rel = f"x{count:03d}/clustering-{mode}.txt"
                    (out / rel).parent.mkdir(parents=True, exist_ok=True)
                    save_clustering(out / rel, a, cost=cost)
                    artifacts[rel] = _sha((out / rel).read_text())
            log(f"count={count} cell={learner}/{mode} sources={len(sources)}")
            for k, target in enumerate(targets):
                for r in range(cfg.trials):
                    key = (learner, k, r)
                    if sources or key not in sourceless:
                        rec = run_learner(learner, target, sources, cfg.transfer, trial_seed(cfg, k, r))
                        if not sources:
                            sourceless[key] = rec
                    else:
                        rec = sourceless[key]
                    result.runs.append(CellRun(count, learner, mode, k, r, len(sources), rec.total,
                                               rec.final, rec.clipped))
                    emit(f"x{count:03d}/{learner}-{mode}/task{k:02d}-trial{r:02d}.csv", rec.to_csv())
    emit("summary.csv", result.summary_csv())
    result.manifest = {
        "seed": int(cfg.seed),
        "config": cfg.to_dict(),
        "previous_tasks": prev_tasks,
        "target_tasks": target_tasks,
        "library_hash": library.hash,
        "artifacts": artifacts,
    }
    if out is not None:
        (out / "manifest.json").write_text(json.dumps(result.manifest, indent=2, sort_keys=True) + "\n")
    return result


@dataclass
class GainRow:
    count: int
    total_gain: float
    final_gain: float
    n_pairs: int


def clustering_gain(with_runs: Mapping[int, Sequence[CellRun]],
                    without_runs: Mapping[int, Sequence[CellRun]]) -> list[GainRow]:
    """Mean paired difference (with minus without) of total and final-episode return per library size."""
    if set(with_runs) != set(without_runs):
        raise ValueError("archives cover different library sizes")
    rows = []
    for count in sorted(with_runs):
        a = {(r.task, r.trial): r for r in with_runs[count]}
        b = {(r.task, r.trial): r for r in without_runs[count]}
        if set(a) != set(b):
            raise ValueError(f"unpaired runs at library size {count}")
        keys = sorted(a)
        rows.append(GainRow(count,
                            float(np.mean([a[k].total - b[k].total for k in keys])),
                            float(np.mean([a[k].final - b[k].final for k in keys])),
                            len(keys)))
    return rows


def gain_csv(rows: Sequence[GainRow]) -> str:
    lines = ["count,total_gain,final_gain,n_pairs"]
    lines += [f"{r.count},{r.total_gain!r},{r.final_gain!r},{r.n_pairs}" for r in rows]
    return "\n".join(lines) + "\n"


def load_summary(path) -> MatrixResult:
    res = MatrixResult()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            res.runs.append(CellRun(int(row["count"]), row["learner"], row["mode"], int(row["task"]),
                                    int(row["trial"]), int(row["n_sources"]), float(row["total"]),
                                    float(row["final"]), int(row["clipped"])))
    return res


def run_continual(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> RunArchive:
    """Lifelong run over ``cfg.continual.n_tasks`` tasks of the configured stream."""
    c = cfg.continual
    params = ContinualParams(j_interval=c.j_interval, source_mode=c.source_mode, learner=c.learner,
                             cost=cfg.clustering.cost, cluster_t=cfg.clustering.cluster_t,
                             t_m=cfg.clustering.t_m, restarts=cfg.clustering.restarts,
                             theta1=cfg.clustering.theta1, transfer=cfg.transfer)
    tasks = build_tasks(cfg, draw_tasks(cfg, "continual", c.n_tasks))
    arch = continual_transfer(tasks, params, cfg.seed, out_dir)
    if out_dir is not None:
        arch.manifest["config"] = cfg.to_dict()
        (Path(out_dir) / "manifest.json").write_text(json.dumps(arch.manifest, indent=2, sort_keys=True) + "\n")
    return arch
