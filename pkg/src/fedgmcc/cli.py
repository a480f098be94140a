"""Command-line front end.

    fedgmcc gen OUT.bin [--n N --classes C --dim D --separation S --seed S]
    fedgmcc partition DATA.bin --clients K [--target-emd T] --out-dir DIR
    fedgmcc emd A.bin B.bin ... [--csv MATRIX.csv]
    fedgmcc run CONFIG.yaml --out-dir DIR [--threads N]
    fedgmcc curveprofile A.bin B.bin --out PROFILE.csv
    fedgmcc config [--out CONFIG.yaml]

Every subcommand exits 0 on success and 2 with a one-line diagnostic on bad
input. The default thread count comes from ``FEDGMCC_THREADS``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import nn
from .config import ConfigError, ExperimentConfig, default_threads, dump_config, load_config
from .curves import fit_curve, flatness, make_probe, straight_curve
from .data import DatasetFormatError, gen_base_task, minmax_bounds, minmax_scale, read_dataset, write_dataset
from .emd import emd_matrix, emd_population, feature_bounds
from .fed import run_experiment
from .nn import ModelArch, ShapeError
from .partition import anneal_to_target_emd, kmeans_seed_partition

METRIC_FIELDS = ["round", "cluster", "members", "n_clusters", "n_val", "val_loss", "val_acc", "train_loss"]


def _fmt(v: float) -> str:
    return repr(float(v))


def cmd_gen(args) -> int:
    d = gen_base_task(args.n, args.classes, args.seed, args.dim, args.separation)
    if not args.raw:
        lo, hi = minmax_bounds(d.x)
        d = minmax_scale(d, lo, hi)
    write_dataset(args.out, d)
    print(f"wrote {d.n} samples ({d.dim}-d, {d.n_classes} classes) to {args.out}")
    return 0


def cmd_partition(args) -> int:
    data = read_dataset(args.data)
    if args.clients < 2:
        raise ConfigError("clients", "must be >= 2")
    plan = kmeans_seed_partition(data, args.clients, args.seed, args.bins)
    seed_emd = plan.achieved_emd
    if args.target_emd is not None:
        if args.target_emd < 0:
            raise ConfigError("target_emd", "must be >= 0")
        plan = anneal_to_target_emd(
            plan, data, args.target_emd, args.seed, max_iters=args.max_iters,
            bins=args.bins, move_batch=args.move_batch,
        )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for d in plan.split(data):
        path = out / f"client_{d.client_id:03d}.bin"
        write_dataset(path, d)
        files.append(path.name)
    report = {
        "clients": args.clients,
        "target_emd": args.target_emd,
        "seed_emd": seed_emd,
        "achieved_emd": plan.achieved_emd,
        "reached": plan.reached,
        "iterations": plan.iterations,
        "moves": plan.moves,
        "shapiro_p": plan.shapiro_p,
        "sizes": [int(s) for s in plan.sizes()],
        "files": files,
    }
    (out / "partition.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"population EMD {plan.achieved_emd:.6f} after {plan.iterations} iterations")
    return 0


def cmd_emd(args) -> int:
    datasets = [read_dataset(p, client_id=i) for i, p in enumerate(args.data)]
    bounds = feature_bounds(datasets)
    print(f"{emd_population(datasets, args.bins, bounds)!r}")
    m = emd_matrix(datasets, args.bins, bounds)
    handle = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        w = csv.writer(handle, lineterminator="\n")
        w.writerow([""] + [Path(p).name for p in args.data])
        for p, row in zip(args.data, m):
            w.writerow([Path(p).name] + [_fmt(v) for v in row])
    finally:
        if args.csv:
            handle.close()
    return 0


def write_metrics_csv(path, metrics) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for m in metrics:
            w.writerow([
                m.round, m.cluster, " ".join(map(str, m.members)), m.n_clusters, m.n_val,
                _fmt(m.val_loss), _fmt(m.val_acc), _fmt(m.train_loss),
            ])


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    threads = args.threads if args.threads is not None else default_threads()
    if threads < 1:
        raise ConfigError("threads", "must be >= 1")
    result = run_experiment(cfg, threads=threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", result.metrics)
    final = result.final()
    summary = {
        "strategy": cfg.strategy,
        "rounds": cfg.rounds,
        "clients": cfg.clients,
        "partition_emd": result.partition_emd,
        "partition": result.partition_info,
        "final_accuracy": result.accuracy(),
        "final_clusters": [m.members for m in final],
        "epsilons": result.epsilons,
        "wall_clock_s": result.wall_clock,
        "threads": threads,
        "config": cfg.to_dict(),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"{cfg.strategy}: final accuracy {result.accuracy():.4f} with {len(final)} cluster(s)")
    return 0


def cmd_curveprofile(args) -> int:
    a = read_dataset(args.a)
    b = read_dataset(args.b)
    if a.dim != b.dim or a.n_classes != b.n_classes:
        raise ConfigError("data", "datasets differ in dimension or class count")
    arch = ModelArch((a.dim, *args.hidden, a.n_classes))
    models = []
    for i, d in enumerate((a, b)):
        w0 = arch.init(args.seed + i)
        models.append(nn.sgd_train(arch, w0, d.x, d.y, args.epochs, args.batch_size, args.lr, args.seed + i))
    probe = make_probe(args.n_mc, a.dim, args.seed)
    grid = np.linspace(0.0, 1.0, args.grid_points)
    c = fit_curve(arch, models[0], models[1], probe, eta=args.eta, steps=args.steps,
                  seed=args.seed, init=args.init, u_grid=grid)
    fitted = flatness(arch, c, probe)
    line = flatness(arch, straight_curve(models[0], models[1], grid), probe)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["u", "curve_loss", "straight_loss"])
        for u, lc, ls in zip(grid, fitted.losses, line.losses):
            w.writerow([_fmt(u), _fmt(lc), _fmt(ls)])
    print(f"max_du curve {fitted.max_du:.6g} straight {line.max_du:.6g}")
    return 0


def cmd_config(args) -> int:
    text = dump_config(ExperimentConfig().validate())
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedgmcc", description="Curve-based clustered federated learning toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a blob classification dataset")
    g.add_argument("out")
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--dim", type=int, default=2)
    g.add_argument("--separation", type=float, default=4.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--raw", action="store_true", help="skip min-max scaling to [0, 1]")
    g.set_defaults(func=cmd_gen)

    q = sub.add_parser("partition", help="split a dataset into K clients at a target EMD")
    q.add_argument("data")
    q.add_argument("--clients", type=int, required=True)
    q.add_argument("--target-emd", type=float)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--bins", type=int, default=4)
    q.add_argument("--max-iters", type=int, default=1000)
    q.add_argument("--move-batch", type=int)
    q.add_argument("--out-dir", required=True)
    q.set_defaults(func=cmd_partition)

    e = sub.add_parser("emd", help="population and pairwise EMD of client datasets")
    e.add_argument("data", nargs="+")
    e.add_argument("--bins", type=int, default=4)
    e.add_argument("--csv", help="write the pairwise matrix here instead of stdout")
    e.set_defaults(func=cmd_emd)

    r = sub.add_parser("run", help="run a federated experiment from a YAML config")
    r.add_argument("config")
    r.add_argument("--out-dir", required=True)
    r.add_argument("--threads", type=int, help="parallel client updates and pair fits")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("curveprofile", help="loss profile of a fitted chain between two trained models")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--out", required=True)
    c.add_argument("--hidden", type=int, nargs="*", default=[16, 16])
    c.add_argument("--epochs", type=int, default=30)
    c.add_argument("--batch-size", type=int, default=32)
    c.add_argument("--lr", type=float, default=0.1)
    c.add_argument("--n-mc", type=int, default=256)
    c.add_argument("--steps", type=int, default=2000)
    c.add_argument("--eta", type=float, default=0.1)
    c.add_argument("--grid-points", type=int, default=21)
    c.add_argument("--init", choices=("sum", "midpoint"), default="midpoint")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_curveprofile)

    k = sub.add_parser("config", help="print the default experiment config")
    k.add_argument("--out")
    k.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (DatasetFormatError, ShapeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"file error: {exc}", file=sys.stderr)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
