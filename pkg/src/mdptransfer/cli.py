"""Command-line entry point: ``mdptransfer <command> ...``.

Failures print one line ``error code=<CODE> message=<text>`` to stderr and
exit with status 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .clustering import (CostParams, TooLargeError, brute_force_best, dumps_clustering, make_cost,
                         summarize)
from .cluster_search import search_clusterings
from .distances import KINDS, DistanceMatrix, SpaceMismatchError, distance_matrix
from .mdp import (MDPValidationError, SolverError, load_mdp, load_policy, save_mdp, save_policy,
                  save_values, solve_optimal)
from .seeding import MASK64
from .continual import run_learner
from .transfer import TransferParams
from .harness.config import ConfigError, ExperimentConfig
from .harness.experiment import (build_tasks, clustering_gain, draw_tasks, gain_csv, run_continual,
                                 run_matrix)
from .harness.report import aggregate


class CLIError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


ERROR_CODES = [
    (ConfigError, "CONFIG"),
    (SpaceMismatchError, "SPACE_MISMATCH"),
    (MDPValidationError, "INVALID_MDP"),
    (SolverError, "SOLVER"),
    (TooLargeError, "TOO_LARGE"),
    (FileNotFoundError, "NOT_FOUND"),
    (OSError, "IO"),
    (ValueError, "INVALID_INPUT"),
]


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(value: str) -> int:
    s = int(value)
    if not 0 <= s <= MASK64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return s


def _config(args, required: bool = False) -> ExperimentConfig | None:
    if args.config is None:
        if required:
            raise CLIError("CONFIG", "this command needs --config")
        return None
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _mdp_paths(items) -> list[Path]:
    paths = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.mdp")))
        elif p.exists():
            paths.append(p)
        else:
            raise FileNotFoundError(f"no such file: {p}")
    if not paths:
        raise CLIError("INVALID_INPUT", "no MDP files given")
    return paths


def cmd_generate(args):
    cfg = _config(args, required=True)
    tasks = draw_tasks(cfg, args.stream, args.count)
    out = _out(args)
    for i, mdp in enumerate(build_tasks(cfg, tasks)):
        save_mdp(mdp, out / f"task-{i:04d}.mdp")
    (out / "tasks.json").write_text(json.dumps(tasks, indent=2) + "\n")
    print(f"wrote {len(tasks)} tasks to {out}")


def cmd_solve(args):
    mdp = load_mdp(args.mdp)
    pi, vf = solve_optimal(mdp, args.tol)
    out = _out(args)
    stem = Path(args.mdp).stem
    save_policy(pi, out / f"{stem}.policy")
    save_values(vf.v, out / f"{stem}.values")
    print(f"v_start {float(vf.v[mdp.initial_state])!r}")


def cmd_distances(args):
    mdps = [load_mdp(p) for p in _mdp_paths(args.mdps)]
    dm = distance_matrix(mdps, args.kind, args.cache)
    out = _out(args)
    dm.save(out / f"distances-{args.kind.lower()}.txt")
    print(f"{args.kind} matrix over {dm.n} tasks, max {float(dm.values.max())!r}")


def _cost_params(args, n_hint: int) -> CostParams:
    if args.library:
        mdps = [load_mdp(p) for p in _mdp_paths(args.library)]
        if len(mdps) != n_hint:
            raise CLIError("INVALID_INPUT", f"library has {len(mdps)} tasks, matrix has {n_hint}")
        return CostParams.for_library(mdps, args.t_horizon)
    if args.delta_r is None or args.gamma is None:
        raise CLIError("INVALID_INPUT", "give --library or both --delta-r and --gamma")
    return CostParams(args.delta_r, args.gamma, args.t_horizon, args.r_max)


def cmd_cluster(args):
    dist = DistanceMatrix.load(args.matrix)
    params = _cost_params(args, dist.n)
    res = search_clusterings(dist, args.cost, params, t_m=args.t_m, restarts=args.restarts,
                             theta1=args.theta1, seed=args.seed or 0, trace_every=args.trace_every)
    out = _out(args)
    summary = summarize(res.clustering, dist_dv=dist if dist.kind == "DV" else None,
                        dist_dm=dist if dist.kind == "DM" else None)
    (out / "clustering.txt").write_text(dumps_clustering(res.clustering, summary, res.cost))
    if args.trace_every:
        res.mhav.write_trace(out / "trace.csv")
    print(f"clusters {res.clustering.c} cost {res.cost!r}")


def cmd_oracle(args):
    mdps = [load_mdp(p) for p in _mdp_paths(args.mdps)]
    kind = "DM" if args.cost == "cost1" else "DV"
    dist = distance_matrix(mdps, kind)
    params = CostParams.for_library(mdps, args.t_horizon)
    best, cost, seen = brute_force_best(dist, make_cost(args.cost, dist, params), return_all=True)
    for a, c in seen:
        print(f"{a!r} {c!r}")
    print(f"argmin {best!r} {cost!r}")
    if args.out:
        out = _out(args)
        summary = summarize(best, dist_dv=dist if kind == "DV" else None, dist_dm=dist if kind == "DM" else None)
        (out / "clustering.txt").write_text(dumps_clustering(best, summary, cost))


def cmd_transfer(args):
    target = load_mdp(args.target)
    sources = [load_policy(p) for p in args.sources]
    cfg = _config(args)
    params = cfg.transfer if cfg is not None else TransferParams()
    for key in ("t_horizon", "beta", "delta", "interval", "horizon"):
        val = getattr(args, key)
        if val is not None:
            setattr(params, key, val)
    seed = args.seed if args.seed is not None else (cfg.seed if cfg is not None else 0)
    if args.learner == "qlearning" and sources:
        raise CLIError("INVALID_INPUT", "the qlearning learner takes no sources")
    rec = run_learner(args.learner, target, sources, params, seed)
    out = _out(args)
    rec.write_csv(out / "learning.csv")
    print(f"episodes {len(rec)} total {rec.total!r} final {rec.final!r}")


def cmd_continual(args):
    cfg = _config(args, required=True)
    arch = run_continual(cfg, _out(args))
    print(f"tasks {len(arch.records)} reclusterings {len(arch.clusterings)}")


def cmd_experiment(args):
    cfg = _config(args, required=True)
    out = _out(args)
    res = run_matrix(cfg, out, log=lambda m: print(m, file=sys.stderr))
    cells = {tuple(c) for c in cfg.cells}
    for learner in ("exp3", "policy_reuse"):
        if (learner, "cluster") in cells and (learner, "sans") in cells:
            rows = clustering_gain(res.select(learner, "cluster"), res.select(learner, "sans"))
            (out / f"gain-{learner}.csv").write_text(gain_csv(rows))
    for learner, mode in cfg.cells:
        for count, mean in sorted(res.mean_total(learner, mode).items()):
            print(f"{learner}/{mode} count={count} mean_total={mean:.1f}")


def cmd_report(args):
    text = aggregate(args.archive, args.every)
    out = Path(args.out) if args.out else Path(args.archive)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(text)
    print(f"wrote {out / 'report.csv'}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mdptransfer", description="Policy reuse across related MDPs.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, out_required=True):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--seed", type=_seed, default=None)
        sp.add_argument("--out", required=out_required, help="output directory")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("generate", cmd_generate, "write a seeded task stream as MDP files")
    sp.add_argument("--count", type=int, default=10)
    sp.add_argument("--stream", default="previous", help="stream name (previous, targets, ...)")

    sp = add("solve", cmd_solve, "solve an MDP file exactly")
    sp.add_argument("mdp")
    sp.add_argument("--tol", type=float, default=1e-8)

    sp = add("distances", cmd_distances, "pairwise task distances")
    sp.add_argument("mdps", nargs="+", help="MDP files or directories of *.mdp")
    sp.add_argument("--kind", choices=KINDS, default="DV")
    sp.add_argument("--cache", default=None, help="distance cache directory")

    sp = add("cluster", cmd_cluster, "annealed clustering search on a matrix")
    sp.add_argument("matrix")
    sp.add_argument("--cost", choices=("cost1", "cost2", "cost2m"), default="cost2")
    sp.add_argument("--library", nargs="*", default=None, help="MDP files behind the matrix")
    sp.add_argument("--delta-r", type=float, default=None)
    sp.add_argument("--gamma", type=float, default=None)
    sp.add_argument("--r-max", type=float, default=1.0)
    sp.add_argument("--t-horizon", type=int, default=10_000)
    sp.add_argument("--t-m", type=int, default=100_000)
    sp.add_argument("--restarts", type=int, default=20)
    sp.add_argument("--theta1", type=float, default=1.0)
    sp.add_argument("--trace-every", type=int, default=0)

    sp = add("oracle", cmd_oracle, "exhaustive clustering of a small library", out_required=False)
    sp.add_argument("mdps", nargs="+")
    sp.add_argument("--cost", choices=("cost1", "cost2", "cost2m"), default="cost2")
    sp.add_argument("--t-horizon", type=int, default=10_000)

    sp = add("transfer", cmd_transfer, "one learning run on a target MDP")
    sp.add_argument("target")
    sp.add_argument("--sources", nargs="*", default=[], help="policy files")
    sp.add_argument("--learner", choices=("exp3", "policy_reuse", "qlearning"), default="exp3")
    sp.add_argument("--episodes", dest="t_horizon", type=int, default=None)
    sp.add_argument("--beta", type=float, default=None)
    sp.add_argument("--delta", type=float, default=None)
    sp.add_argument("--interval", type=int, default=None)
    sp.add_argument("--horizon", type=int, default=None)

    add("continual", cmd_continual, "lifelong run over a task stream")
    add("experiment", cmd_experiment, "full experiment matrix with clustering gains")

    sp = add("report", cmd_report, "aggregate learning curves of an archive", out_required=False)
    sp.add_argument("archive")
    sp.add_argument("--every", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except CLIError as exc:
        return _fail(exc.code, str(exc))
    except Exception as exc:
        for cls, code in ERROR_CODES:
            if isinstance(exc, cls):
                return _fail(code, str(exc))
        return _fail("INTERNAL", f"{type(exc).__name__}: {exc}")
    return 0


def _fail(code: str, message: str) -> int:
    flat = " ".join(message.split())
    print(f"error code={code} message={flat}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
