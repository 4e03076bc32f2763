"""``alcurve`` command line.

Exit codes: 0 success, 1 internal error, 2 config/usage error, 3 data/file
error.
"""

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .agent import train_agent
from .config import ConfigError, load_config
from .driver import STRATEGIES, _TableEstimator, agent_features, run_experiment
from .lookup import (
    TABLE_SUFFIX,
    LookupFileError,
    build_sketch,
    build_table,
    estimate_performance,
    load_table,
    save_table,
)
from .oracle import generate_synthetic_task, load_task, proxy_performance, save_task
from .stats import summarize

log = logging.getLogger("alcurve")

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3
CSV_COLUMNS = ("strategy", "seed", "cycle", "labeled_size", "perf", "fallback_count",
               "duration_ms")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _parse_list(text, cast=str):
    return [cast(x) for x in text.replace(",", " ").split()]


def _workers(flag):
    env = os.environ.get("ALCURVE_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"ALCURVE_WORKERS must be an integer, got {env!r}") from None
    if flag is not None:
        return max(1, flag)
    return os.cpu_count() or 1


def _task_for(cfg, task_path=None):
    if task_path:
        try:
            return load_task(task_path)
        except FileNotFoundError:
            raise DataError(f"task file not found: {task_path}") from None
        except (ValueError, KeyError) as exc:
            raise DataError(f"cannot read task file {task_path}: {exc}") from None
    return generate_synthetic_task(cfg.task_config(), cfg.task.seed)


def _check_strategies(names):
    bad = [s for s in names if s not in STRATEGIES]
    if bad:
        raise UsageError(
            f"unknown strategy {', '.join(bad)}; valid names: {', '.join(STRATEGIES)}"
        )


def _out_dir(args, cfg):
    out = args.out or cfg.out_dir
    if not out:
        raise UsageError("an output directory is required (--out or out_dir in config)")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _run_job(job):
    cfg, strategy, seed, task = job
    logs = run_experiment(cfg.al_config(strategy, seed), task)
    return strategy, seed, logs


def _run_all(cfg, task, strategies, seeds, workers):
    # duplicate names in --strategies run once and are reported per entry
    unique = list(dict.fromkeys(strategies))
    jobs = [(cfg, s, seed, task) for s in unique for seed in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            results = list(ex.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    return {(s, seed): logs for s, seed, logs in results}


def _csv_rows(strategy, seed, logs):
    for entry in logs:
        yield [strategy, seed, entry.cycle, entry.labeled_size, repr(entry.perf),
               entry.fallback_count, f"{entry.duration_ms:.3f}"]


def _write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerows(rows)


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _seeds(args, cfg):
    return _parse_list(args.seeds, int) if args.seeds else list(cfg.seeds)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_task(args):
    cfg = load_config(args.config)
    seed = cfg.task.seed if args.seed is None else args.seed
    task = generate_synthetic_task(cfg.task_config(), seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_task(task, args.out)
    log.info("wrote task (N=%d, d=%d, seed=%d) to %s", task.n_pool,
             task.pool_features.shape[1], seed, args.out)


def cmd_run(args):
    cfg = load_config(args.config)
    strategy = args.strategy or cfg.strategy
    _check_strategies([strategy])
    seeds = _seeds(args, cfg)
    out = _out_dir(args, cfg)
    task = _task_for(cfg, args.task)
    results = _run_all(cfg, task, [strategy], seeds, _workers(args.workers))
    rows = []
    runs = []
    for seed in seeds:
        logs = results[(strategy, seed)]
        rows.extend(_csv_rows(strategy, seed, logs))
        runs.append({"strategy": strategy, "seed": seed,
                     "cycles": [e.to_dict() for e in logs]})
    _write_csv(out / "results.csv", rows)
    _write_json(out / "log.json", {"config": cfg.model_dump(mode="json"), "runs": runs})
    log.info("wrote %s and %s", out / "results.csv", out / "log.json")


def cmd_bench(args):
    cfg = load_config(args.config)
    strategies = _parse_list(args.strategies)
    _check_strategies(strategies)
    if len(strategies) < 2:
        raise UsageError("bench needs at least two strategies")
    seeds = _seeds(args, cfg)
    out = _out_dir(args, cfg)
    task = _task_for(cfg, args.task)
    results = _run_all(cfg, task, strategies, seeds, _workers(args.workers))
    rows = []
    for s in dict.fromkeys(strategies):
        for seed in seeds:
            rows.extend(_csv_rows(s, seed, results[(s, seed)]))
    _write_csv(out / "bench.csv", rows)
    finals = [[results[(s, seed)][-1].perf for seed in seeds] for s in strategies]
    summary = summarize(strategies, seeds, finals)
    _write_json(out / "summary.json", summary)
    for entry in summary["strategies"]:
        print(f"{entry['name']:>8s}  mean={entry['mean']:.4f}  std={entry['std']:.4f}")
    for pair in summary["pairs"]:
        print(f"{pair['a']} vs {pair['b']}: diff={pair['mean_diff']:+.4f} "
              f"p(a>b)={pair['p_greater']:.4g}")


def _initial_state(cfg, task, seed):
    al = cfg.al_config(seed=seed)
    root = np.random.SeedSequence(seed)
    init_ss, *rest = root.spawn(al.cycles + 1)
    init = np.sort(np.random.default_rng(init_ss).choice(
        task.n_pool, size=al.initial_labeled, replace=False))
    return al, init, np.setdiff1d(np.arange(task.n_pool), init)


CALIBRATION_TARGET = 0.1


def table_check(table, task, labeled, unlabeled, al, n, rng):
    """Median |estimate - proxy| on ``n`` fresh random batches, and their perf range.

    Estimates are taken without the fallback rule so every batch counts.
    """
    errs, seen = [], []
    for _ in range(n):
        ids = np.sort(rng.choice(unlabeled, size=al.budget, replace=False))
        est = estimate_performance(table, build_sketch(task.pool_features[ids], al.table.Q),
                                   allow_fallback=False)
        truth = proxy_performance(labeled, ids, task, al.oracle)
        errs.append(abs(est.value - truth))
        seen.append(truth)
    return float(np.median(errs)), float(max(seen) - min(seen))


def cmd_table(args):
    if args.action == "inspect":
        if not args.table:
            raise UsageError("table inspect needs --table")
        table = load_table(args.table)
        perfs = np.array([r.perf for r in table.records])
        fmt = lambda x: "undefined" if x is None else f"{x:.6g}"
        print(f"records (M): {table.size}")
        print(f"levels (Q): {table.n_levels}")
        print(f"neighbours (k): {table.k}")
        print(f"mu_d: {fmt(table.mu_d)}")
        print(f"sigma_d: {fmt(table.sigma_d)}")
        print(f"tau: {fmt(table.tau)}")
        print(f"perf min/mean/max: {perfs.min():.6g} / {perfs.mean():.6g} / {perfs.max():.6g}")
        return
    if not args.config or not args.out:
        raise UsageError("table build needs --config and --out")
    cfg = load_config(args.config)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    task = _task_for(cfg, args.task)
    al, lab, unl = _initial_state(cfg, task, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    table = build_table(
        task.pool_features, unl, lab, lambda l, c: proxy_performance(l, c, task, al.oracle),
        al.table.M, al.budget, al.table.Q, al.table.k, al.table.eps_w, rng,
        al.table.tau_mult, 0, _workers(args.workers),
    )
    out = args.out if args.out.endswith(TABLE_SUFFIX) else args.out + TABLE_SUFFIX
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    save_table(table, out)
    if args.check:
        err, spread = table_check(table, task, lab, unl, al, args.check, rng)
        ratio = err / spread if spread > 0 else float("inf")
        print(f"median abs error over {args.check} held-out batches: {err:.6g}")
        print(f"observed perf range: {spread:.6g}")
        print(f"error / range: {ratio:.4g} (target < {CALIBRATION_TARGET})")
    log.info("wrote %d records to %s", table.size, out)


def cmd_train(args):
    cfg = load_config(args.config)
    seed = cfg.seeds[0] if args.seed is None else args.seed
    task = _task_for(cfg, args.task)
    al, lab, unl = _initial_state(cfg, task, seed)
    rng_table, rng_train = np.random.default_rng(np.random.SeedSequence([seed, 2])).spawn(2)
    table = build_table(
        task.pool_features, unl, lab, lambda l, c: proxy_performance(l, c, task, al.oracle),
        al.table.M, al.budget, al.table.Q, al.table.k, al.table.eps_w, rng_table,
        al.table.tau_mult, 0, _workers(args.workers),
    )
    est = _TableEstimator(table, task, lab, unl, al.oracle, al.table.Q,
                          al.table.append_fallback, 0)
    feats = agent_features(task)[unl]
    _, history = train_agent(feats, est, al.agent, al.train, rng_train)
    out = _out_dir(args, cfg)
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("iteration", "estimate", "advantage", "fallback", "grad_norm"))
        for h in history:
            w.writerow((h.iteration, repr(h.estimate), repr(h.advantage), int(h.fallback),
                        repr(h.grad_norm)))
    log.info("trained %d iterations, %d fallbacks; wrote %s", len(history),
             est.fallbacks, out / "history.csv")


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="alcurve", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-task", help="generate a synthetic task file")
    g.add_argument("--config", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_task)

    r = sub.add_parser("run", help="run one strategy over the configured seeds")
    r.add_argument("--config", required=True)
    r.add_argument("--strategy")
    r.add_argument("--seeds")
    r.add_argument("--task")
    r.add_argument("--out")
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="compare strategies over paired seeds")
    b.add_argument("--config", required=True)
    b.add_argument("--strategies", required=True)
    b.add_argument("--seeds")
    b.add_argument("--task")
    b.add_argument("--out")
    b.add_argument("--workers", type=int)
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("table", help="build or inspect a lookup table")
    t.add_argument("action", choices=("build", "inspect"))
    t.add_argument("--config")
    t.add_argument("--table")
    t.add_argument("--task")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--workers", type=int)
    t.add_argument("--check", type=int, default=0, metavar="N",
                   help="report estimation error on N held-out random batches")
    t.set_defaults(func=cmd_table)

    a = sub.add_parser("train", help="train the agent on the cycle-0 state")
    a.add_argument("--config", required=True)
    a.add_argument("--seed", type=int)
    a.add_argument("--task")
    a.add_argument("--out")
    a.add_argument("--workers", type=int)
    a.set_defaults(func=cmd_train)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"alcurve: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, LookupFileError) as exc:
        print(f"alcurve: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.exception("internal error")
        print(f"alcurve: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
