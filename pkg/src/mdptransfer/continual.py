"""Lifelong loop: transfer into each arriving task, then grow the library and periodically re-cluster."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .clustering import (Clustering, CostParams, greedy_cluster, save_clustering, summarize)
from .cluster_search import search_clusterings
from .distances import DM, DV, DistanceMatrix, Solved, _check_spaces, d_m, d_v
from .mdp import StationaryPolicy, TabularMDP, library_hash
from .seeding import child_seed
from .transfer import (LearningRecord, TransferParams, exp3_transfer_run, policy_reuse_run,
                       q_learning_run)

SOURCE_MODES = ("cluster", "greedy", "sans", "none")
LEARNERS = ("exp3", "policy_reuse", "qlearning")
COSTS = ("cost1", "cost2", "cost2m")


class TaskLibrary:
    """Solved previous tasks with incrementally grown distance matrices."""

    def __init__(self, tasks: Iterable[TabularMDP | Solved] = ()):
        self.solved: list[Solved] = []
        self._dv = np.zeros((0, 0))
        self._dm = np.zeros((0, 0))
        for t in tasks:
            self.add(t)

    def __len__(self):
        return len(self.solved)

    @property
    def mdps(self) -> list[TabularMDP]:
        return [s.mdp for s in self.solved]

    @property
    def policies(self) -> list[StationaryPolicy]:
        return [s.policy for s in self.solved]

    @property
    def hash(self) -> str:
        return library_hash(self.mdps)

    def add(self, task: TabularMDP | Solved) -> Solved:
        new = task if isinstance(task, Solved) else Solved.of(task)
        if self.solved:
            _check_spaces(self.solved[0].mdp, new.mdp)
        n = len(self.solved)
        dv = np.zeros((n + 1, n + 1))
        dv[:n, :n] = self._dv
        dm = np.zeros((n + 1, n + 1))
        dm[:n, :n] = self._dm
        for i, old in enumerate(self.solved):
            dv[i, n] = dv[n, i] = d_v(old, new)
            dm[i, n] = dm[n, i] = d_m(old.mdp, new.mdp)
        self._dv, self._dm = dv, dm
        self.solved.append(new)
        return new

    def distances(self, kind: str, upto: int | None = None) -> DistanceMatrix:
        """Distance matrix over the first ``upto`` tasks (all by default)."""
        n = len(self) if upto is None else upto
        vals = (self._dv if kind == DV else self._dm)[:n, :n]
        return DistanceMatrix(kind, vals.copy(), list(range(n)), library_hash(self.mdps[:n]))


def metric_for_cost(cost: str) -> str:
    return DM if cost == "cost1" else DV


def source_pol(a: Clustering, library: TaskLibrary, kind: str = DV) -> list[StationaryPolicy]:
    """Optimal policy of each cluster's centroid under ``kind``, in canonical cluster order."""
    if a.n > len(library):
        raise ValueError("clustering refers to tasks outside the library")
    s = summarize(a, dist_dv=library.distances(DV, a.n) if kind == DV else None,
                  dist_dm=library.distances(DM, a.n) if kind == DM else None)
    centres = s.centroid_dv if kind == DV else s.centroid_dm
    return [library.solved[i].policy for i in centres]


@dataclass
class ContinualParams:
    j_interval: int = 10
    source_mode: str = "cluster"
    learner: str = "exp3"
    cost: str = "cost2"
    cluster_t: int | None = None  # horizon inside the cost; defaults to the transfer horizon
    t_m: int = 100_000
    restarts: int = 20
    theta1: float = 1.0
    greedy_threshold: float = 0.0
    transfer: TransferParams = field(default_factory=TransferParams)

    def __post_init__(self):
        if self.j_interval < 1:
            raise ValueError("j_interval must be >= 1")
        if self.source_mode not in SOURCE_MODES:
            raise ValueError(f"unknown source mode {self.source_mode!r}")
        if self.learner not in LEARNERS:
            raise ValueError(f"unknown learner {self.learner!r}")
        if self.cost not in COSTS:
            raise ValueError(f"unknown cost {self.cost!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ContinualParams":
        d = dict(d)
        if isinstance(d.get("transfer"), dict):
            d["transfer"] = TransferParams.from_dict(d["transfer"])
        return cls(**d)


def cluster_library(library: TaskLibrary, params: ContinualParams, seed: int,
                    upto: int | None = None) -> Clustering:
    """Partition the first ``upto`` library tasks according to ``params.source_mode``."""
    n = len(library) if upto is None else upto
    kind = metric_for_cost(params.cost)
    if params.source_mode == "sans":
        return Clustering.singletons(n)
    dist = library.distances(kind, n)
    if params.source_mode == "greedy":
        return greedy_cluster(dist, params.greedy_threshold)
    cp = CostParams.for_library(library.mdps[:n], params.cluster_t or params.transfer.t_horizon)
    res = search_clusterings(dist, params.cost, cp, t_m=params.t_m, restarts=params.restarts,
                             theta1=params.theta1, seed=seed)
    return res.clustering


def run_learner(learner: str, target: TabularMDP, sources: Sequence[StationaryPolicy],
                params: TransferParams, seed: int) -> LearningRecord:
    if learner == "exp3":
        return exp3_transfer_run(target, sources, params, seed)
    if learner == "policy_reuse":
        return policy_reuse_run(target, sources, params, seed)
    return q_learning_run(target, params, seed)


@dataclass
class RunArchive:
    records: list[LearningRecord] = field(default_factory=list)
    clusterings: dict[int, Clustering] = field(default_factory=dict)
    source_counts: list[int] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def continual_transfer(tasks: Iterable[TabularMDP], params: ContinualParams | None = None,
                       seed: int = 0, out_dir: str | Path | None = None,
                       library: TaskLibrary | None = None) -> RunArchive:
    """Process a task stream in order.

    Each task is learned with the sources derived from the clustering in force
    (none before the first clustering), then solved exactly and added to the
    library. Every ``j_interval`` tasks the library is re-partitioned. With
    ``source_mode="sans"`` every previous optimal policy is a source; with
    ``"none"`` no sources are ever used. If a re-clustering fails the
    previous clustering stays in force.
    """
    params = params or ContinualParams()
    library = library if library is not None else TaskLibrary()
    kind = metric_for_cost(params.cost)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    arch = RunArchive()
    current: Clustering | None = None
    artifacts = {}
    errors = []
    for h, mdp in enumerate(tasks):
        if params.source_mode == "sans":
            sources = library.policies
        elif params.source_mode == "none" or current is None:
            sources = []
        else:
            sources = source_pol(current, library, kind)
        rec = run_learner(params.learner, mdp, sources, params.transfer, child_seed(seed, "transfer", h))
        arch.records.append(rec)
        arch.source_counts.append(len(sources))
        library.add(mdp)
        if out is not None:
            text = rec.to_csv()
            name = f"task-{h:04d}.csv"
            (out / name).write_text(text)
            artifacts[name] = _sha(text)
        if params.source_mode in ("cluster", "greedy") and (h + 1) % params.j_interval == 0:
            try:
                current = cluster_library(library, params, child_seed(seed, "cluster", h))
            except Exception as exc:  # keep the previous clustering
                errors.append(f"task {h}: {type(exc).__name__}: {exc}")
                continue
            arch.clusterings[h] = current
            if out is not None:
                name = f"clustering-{h:04d}.txt"
                save_clustering(out / name, current,
                                summarize(current, library.distances(DV), library.distances(DM)))
                artifacts[name] = _sha((out / name).read_text())
    arch.manifest = {
        "seed": int(seed),
        "params": params.to_dict(),
        "n_tasks": len(arch.records),
        "library_hash": library.hash,
        "source_counts": arch.source_counts,
        "clustering_errors": errors,
        "artifacts": artifacts,
    }
    if out is not None:
        (out / "manifest.json").write_text(json.dumps(arch.manifest, indent=2, sort_keys=True) + "\n")
    return arch
