"""Experiment configuration, stored as JSON.

Top-level keys (all optional except ``domain``)::

    seed               master seed (u64)
    domain             {"kind": windy|surveillance|graph|synthetic, "params": {...}}
    stream             {"kind": grouped|uniform|explicit, "n_targets": int,
                        "groups": [[g1, g2, ...], ...], "tasks": [{...}, ...]}
    previous_counts    library sizes to evaluate, e.g. [10, 30, 60]
    tasks_per_point    target tasks per library size
    trials             seeded trials per target task
    cells              [[learner, source_mode], ...]
                       learner in exp3|policy_reuse|qlearning,
                       source_mode in cluster|greedy|sans|handpicked|none
    handpicked         library indices used by the handpicked cells
    clustering         {"cost", "t_m", "restarts", "theta1", "cluster_t", "greedy_thresholds"}
    transfer           TransferParams fields (q holds the Q-learning block)
    continual          {"n_tasks", "j_interval", "source_mode", "learner"}
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..continual import LEARNERS, SOURCE_MODES
from ..domains import DomainSpec
from ..transfer import TransferParams

CELL_MODES = SOURCE_MODES + ("handpicked",)
STREAM_KINDS = ("grouped", "uniform", "explicit")


class ConfigError(ValueError):
    pass


@dataclass
class StreamSpec:
    kind: str = "uniform"
    n_targets: int = 2
    groups: list[list[int]] = field(default_factory=list)
    tasks: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in STREAM_KINDS:
            raise ConfigError(f"unknown stream kind {self.kind!r}")
        if self.kind == "grouped" and not self.groups:
            raise ConfigError("grouped streams need a nonempty 'groups' list")
        if self.kind == "explicit" and not self.tasks:
            raise ConfigError("explicit streams need a nonempty 'tasks' list")


@dataclass
class ClusteringSpec:
    cost: str = "cost2"
    t_m: int = 100_000
    restarts: int = 20
    theta1: float = 1.0
    cluster_t: int | None = None
    greedy_thresholds: list[float] | None = None

    def __post_init__(self):
        if self.cost not in ("cost1", "cost2", "cost2m"):
            raise ConfigError(f"unknown cost {self.cost!r}")


@dataclass
class ContinualSpec:
    n_tasks: int = 30
    j_interval: int = 10
    source_mode: str = "cluster"
    learner: str = "exp3"


@dataclass
class ExperimentConfig:
    domain: DomainSpec
    seed: int = 0
    stream: StreamSpec = field(default_factory=StreamSpec)
    previous_counts: list[int] = field(default_factory=lambda: [10, 30, 60])
    tasks_per_point: int = 10
    trials: int = 10
    cells: list[list[str]] = field(default_factory=lambda: [["exp3", "cluster"], ["exp3", "sans"],
                                                           ["qlearning", "none"]])
    handpicked: list[int] = field(default_factory=list)
    clustering: ClusteringSpec = field(default_factory=ClusteringSpec)
    transfer: TransferParams = field(default_factory=TransferParams)
    continual: ContinualSpec = field(default_factory=ContinualSpec)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if any(c < 1 for c in self.previous_counts):
            raise ConfigError("previous_counts must be positive")
        if self.tasks_per_point < 1 or self.trials < 1:
            raise ConfigError("tasks_per_point and trials must be >= 1")
        for cell in self.cells:
            if len(cell) != 2 or cell[0] not in LEARNERS or cell[1] not in CELL_MODES:
                raise ConfigError(f"bad cell {cell!r}")
            if cell[0] == "qlearning" and cell[1] != "none":
                raise ConfigError("Q-learning has no source set; use source mode 'none'")
        if any(("handpicked" == c[1]) for c in self.cells) and not self.handpicked:
            raise ConfigError("handpicked cells need a 'handpicked' index list")

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "domain": self.domain.to_dict(),
            "stream": asdict(self.stream),
            "previous_counts": list(self.previous_counts),
            "tasks_per_point": self.tasks_per_point,
            "trials": self.trials,
            "cells": [list(c) for c in self.cells],
            "handpicked": list(self.handpicked),
            "clustering": asdict(self.clustering),
            "transfer": self.transfer.to_dict(),
            "continual": asdict(self.continual),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if "domain" not in d:
            raise ConfigError("config needs a 'domain' block")
        known = {"seed", "domain", "stream", "previous_counts", "tasks_per_point", "trials", "cells",
                 "handpicked", "clustering", "transfer", "continual"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            kw = dict(d)
            kw["domain"] = DomainSpec.from_dict(d["domain"])
            if "stream" in d:
                kw["stream"] = StreamSpec(**d["stream"])
            if "clustering" in d:
                kw["clustering"] = ClusteringSpec(**d["clustering"])
            if "transfer" in d:
                kw["transfer"] = TransferParams.from_dict(d["transfer"])
            if "continual" in d:
                kw["continual"] = ContinualSpec(**d["continual"])
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.loads(Path(path).read_text())
