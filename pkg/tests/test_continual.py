import json

import numpy as np
import pytest

from mdptransfer import continual
from mdptransfer.clustering import Clustering
from mdptransfer.continual import ContinualParams, TaskLibrary, continual_transfer, source_pol
from mdptransfer.distances import DM, DV, SpaceMismatchError, distance_matrix
from mdptransfer.domains import synthetic_singleton, windy_corridor
from mdptransfer.harness.config import ExperimentConfig
from mdptransfer.harness.experiment import build_tasks, draw_tasks
from mdptransfer.seeding import child_seed
from mdptransfer.transfer import TransferParams, exp3_transfer_run, q_learning_run

FAST = TransferParams(t_horizon=60, horizon=40)


def windy_stream():
    return [windy_corridor(g, w) for g, w in [(1, 0), (5, 3), (1, 6), (5, 9), (8, 2), (1, 4)]]


def test_incremental_matrices_match_batch():
    tasks = windy_stream()
    lib = TaskLibrary(tasks)
    assert np.allclose(lib.distances(DV).values, distance_matrix(tasks, DV).values)
    assert np.allclose(lib.distances(DM, 4).values, distance_matrix(tasks[:4], DM).values)
    with pytest.raises(SpaceMismatchError):
        lib.add(synthetic_singleton([1.0]))


def test_source_pol_singletons_and_duplicate_tie_break():
    tasks = windy_stream()
    lib = TaskLibrary(tasks)
    assert source_pol(Clustering.singletons(6), lib) == lib.policies
    dup = TaskLibrary([windy_corridor(2, 0)] * 3)
    assert source_pol(Clustering.single(3), dup)[0] is dup.solved[0].policy
    with pytest.raises(ValueError):
        source_pol(Clustering.singletons(7), lib)


def test_first_task_is_pure_q_learning():
    tasks = windy_stream()[:2]
    arch = continual_transfer(tasks, ContinualParams(j_interval=1, t_m=200, restarts=1, transfer=FAST), seed=4)
    expected = q_learning_run(tasks[0], FAST, child_seed(4, "transfer", 0))
    assert arch.records[0].to_csv() == expected.to_csv()


def test_every_task_reclusters_with_unit_interval():
    arch = continual_transfer(windy_stream(), ContinualParams(j_interval=1, t_m=300, restarts=1, transfer=FAST))
    assert sorted(arch.clusterings) == list(range(6))
    for h, a in arch.clusterings.items():
        assert a.n == h + 1
    assert arch.source_counts[0] == 0
    assert all(c >= 1 for c in arch.source_counts[1:])


def test_sans_uses_every_previous_policy():
    tasks = windy_stream()
    arch = continual_transfer(tasks, ContinualParams(source_mode="sans", transfer=FAST), seed=2)
    assert arch.source_counts == list(range(6))
    lib = TaskLibrary(tasks[:3])
    again = exp3_transfer_run(tasks[3], lib.policies, FAST, child_seed(2, "transfer", 3))
    assert arch.records[3].to_csv() == again.to_csv()


def test_failed_clustering_keeps_previous(monkeypatch):
    real = continual.cluster_library
    calls = []

    def flaky(library, params, seed, upto=None):
        calls.append(len(library))
        if len(calls) > 1:
            raise RuntimeError("boom")
        return real(library, params, seed, upto)

    monkeypatch.setattr(continual, "cluster_library", flaky)
    arch = continual_transfer(windy_stream(), ContinualParams(j_interval=2, t_m=300, restarts=1, transfer=FAST))
    assert list(arch.clusterings) == [1]
    assert len(arch.manifest["clustering_errors"]) == 2
    first = arch.clusterings[1].c
    assert arch.source_counts[2:] == [first] * 4


def test_archive_files_and_reproducibility(tmp_path):
    params = ContinualParams(j_interval=3, t_m=300, restarts=1, transfer=FAST)
    continual_transfer(windy_stream(), params, seed=9, out_dir=tmp_path / "a")
    continual_transfer(windy_stream(), params, seed=9, out_dir=tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["clustering-0002.txt", "clustering-0005.txt", "manifest.json"] + \
        [f"task-{h:04d}.csv" for h in range(6)]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 9 and set(manifest["artifacts"]) == set(names) - {"manifest.json"}
    assert ContinualParams.from_dict(manifest["params"]) == params


def test_invalid_params():
    with pytest.raises(ValueError):
        ContinualParams(j_interval=0)
    with pytest.raises(ValueError):
        ContinualParams(source_mode="all")


def test_grouped_surveillance_stream_beats_unclustered_sources():
    # Three reward-pattern groups, 30 tasks, re-clustering every 10.
    cfg = ExperimentConfig.from_dict({"domain": {"kind": "surveillance"}, "seed": 3,
                                      "stream": {"kind": "grouped", "groups": [[0, 1], [2, 3], [1, 2]]}})
    tasks = build_tasks(cfg, draw_tasks(cfg, "continual", 30))
    tp = TransferParams(t_horizon=500)
    clu = continual_transfer(tasks, ContinualParams(t_m=5000, restarts=3, transfer=tp), seed=1)
    sans = continual_transfer(tasks, ContinualParams(source_mode="sans", transfer=tp), seed=1)
    assert all(c <= 5 for c in clu.source_counts[10:])
    assert sum(r.total for r in clu.records[10:]) > sum(r.total for r in sans.records[10:])
