"""Acceptance criteria, one test each. Every test prints a single
``[PASS]``/``[FAIL]`` line with the measured quantity before asserting."""

import itertools
import statistics
import time

import numpy as np
from scipy.stats import spearmanr, wasserstein_distance

from alcurve.agent import (
    AgentConfig,
    AgentParams,
    BaselineTracker,
    Episode,
    _backward,
    _forward,
    agent_forward,
    lstm_cell_backward,
    lstm_cell_forward,
    plackett_luce_logprob,
    reinforce_grad,
    rollout,
    sample_selection,
    update_baseline,
)
from alcurve.cli import _initial_state, main as cli_main
from alcurve.config import load_config
from alcurve.lookup import (
    QuantileSketch,
    build_sketch,
    build_table,
    estimate_performance,
    load_table,
    save_table,
    wasserstein1,
)
from alcurve.numerics import finite_diff_grad
from alcurve.oracle import generate_synthetic_task, prototype_performance, proxy_performance

from conftest import CONFIGS, final_perfs, random_params, read_csv, rel_err, small_agent_cfg


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    assert ok, detail


# ---------------------------------------------------------------------------
# 1. gradients against central differences
# ---------------------------------------------------------------------------


def test_c1_gradient_correctness(capsys):
    t0 = time.perf_counter()
    worst = {"cell": 0.0, "forward": 0.0, "reinforce": 0.0}
    n_cfg = 20
    for k in range(n_cfg):
        rng = np.random.default_rng(1000 + k)
        cfg = small_agent_cfg(rng, budget=int(rng.integers(1, 4)))
        p = random_params(cfg, rng)
        d, H = cfg.feat_dim, cfg.hidden_dim
        theta = p.flat()

        x, h, c = rng.normal(size=d + 1), rng.normal(size=H), rng.normal(size=H)
        rh, rc = rng.normal(size=H), rng.normal(size=H)
        cell_loss = lambda v: float(np.dot(rh, lstm_cell_forward(x, h, c, AgentParams.from_flat(cfg, v))[0])
                                    + np.dot(rc, lstm_cell_forward(x, h, c, AgentParams.from_flat(cfg, v))[1]))
        g_cell = lstm_cell_backward(x, h, c, p, rh, rc)[0].flat()
        worst["cell"] = max(worst["cell"], rel_err(g_cell, finite_diff_grad(cell_loss, theta)))

        n = int(rng.integers(3, 8))
        X = rng.normal(size=(n, d))
        order = rng.permutation(n)
        r = rng.normal(size=n)
        fwd_loss = lambda v: float(r @ agent_forward(X, order, AgentParams.from_flat(cfg, v))[1])
        _, scores = agent_forward(X, order, p)
        g_fwd = _backward(_forward(X, order, p), r * scores * (1.0 - scores), p).flat()
        worst["forward"] = max(worst["forward"], rel_err(g_fwd, finite_diff_grad(fwd_loss, theta)))

        ep, _ = rollout(X, p, cfg, rng, order=order)
        R, b = float(rng.uniform()), float(rng.uniform())
        rf_loss = lambda v: -(R - b) * plackett_luce_logprob(
            agent_forward(X, order, AgentParams.from_flat(cfg, v))[0], ep.picks)
        g_rf = reinforce_grad(ep, R, b, X, p)
        worst["reinforce"] = max(worst["reinforce"], rel_err(g_rf, finite_diff_grad(rf_loss, theta)))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    detail = (f"{n_cfg} configs, max rel err cell {worst['cell']:.2e}, forward "
              f"{worst['forward']:.2e}, reinforce {worst['reinforce']:.2e} (< 1e-4); "
              f"{elapsed:.1f}s (< 60s)")
    report(capsys, 1, ok, detail)


# ---------------------------------------------------------------------------
# 2. REINFORCE estimator is unbiased
# ---------------------------------------------------------------------------


def _expected_reward(logits, rewards):
    """Sum over ordered pairs (a, b) of P(a then b) * R({a, b})."""
    w = np.exp(logits - logits.max())
    W = w.sum()
    total = 0.0
    for a, b in itertools.permutations(range(len(w)), 2):
        total += w[a] / W * w[b] / (W - w[a]) * rewards[frozenset((a, b))]
    return total


def test_c2_reinforce_unbiased(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    cfg = AgentConfig(feat_dim=3, hidden_dim=4, decoder_hidden=3, budget=2)
    p = random_params(cfg, rng, scale=1.0)
    X = rng.normal(size=(4, 3))
    order = np.arange(4)
    rewards = {frozenset(m): float(rng.uniform()) for m in itertools.combinations(range(4), 2)}
    assert len(rewards) == 6

    # oracle: central differences of the exactly enumerated expected reward
    exact = finite_diff_grad(
        lambda v: _expected_reward(agent_forward(X, order, AgentParams.from_flat(cfg, v))[0],
                                   rewards), p.flat())

    cache = _forward(X, order, p)
    draws = 200_000
    counts = {}
    for _ in range(draws):
        key = tuple(int(i) for i in sample_selection(cache.logits, 2, 1.0, rng).picks)
        counts[key] = counts.get(key, 0) + 1
    mc = np.zeros(p.size)
    for key, cnt in counts.items():
        picks = np.array(key)
        mask = np.zeros(4, dtype=np.int8)
        mask[picks] = 1
        ep = Episode(cache.order, cache.logits, cache.scores, mask,
                     plackett_luce_logprob(cache.logits, picks), picks)
        # reinforce_grad is the gradient of the loss -(R - b) log pi
        mc -= cnt * reinforce_grad(ep, rewards[frozenset(key)], 0.0, X, p, cache=cache)
    mc /= draws
    cos = float(mc @ exact / (np.linalg.norm(mc) * np.linalg.norm(exact)))
    elapsed = time.perf_counter() - t0
    ok = cos > 0.99 and elapsed < 120
    report(capsys, 2, ok, f"cosine(MC over {draws} episodes, exact) = {cos:.5f} (> 0.99); "
                          f"{len(counts)} distinct pick sequences; {elapsed:.1f}s (< 120s)")


# ---------------------------------------------------------------------------
# 3. baseline recurrence fixed points
# ---------------------------------------------------------------------------


def test_c3_baseline_recurrence(capsys):
    r = 0.734
    std = BaselineTracker(0.0, 0.5, "standard-ema")
    lit = BaselineTracker(0.0, 0.5, "paper-literal")
    for _ in range(100):
        std = update_baseline(std, r)
        lit = update_baseline(lit, r)
    e_std, e_lit = abs(std.ref - r), abs(lit.ref - r / 2)
    ok = e_std < 1e-9 and e_lit < 1e-9
    report(capsys, 3, ok, f"after 100 steps at lambda=0.5: |standard - r| = {e_std:.1e}, "
                          f"|literal - r/2| = {e_lit:.1e} (< 1e-9)")


# ---------------------------------------------------------------------------
# 4. Wasserstein distance
# ---------------------------------------------------------------------------


def _matching_w1(x, y):
    return float(np.mean(np.abs(np.sort(x) - np.sort(y))))


def test_c4_wasserstein(capsys):
    rng = np.random.default_rng(4)
    worst_sorted = worst_scipy = worst_perm = 0.0
    for _ in range(1000):
        B = int(rng.integers(1, 9))
        D = int(rng.integers(1, 5))
        X = rng.normal(size=(B, D)) * rng.uniform(0.1, 5.0)
        Y = rng.normal(size=(B, D)) * rng.uniform(0.1, 5.0) + rng.normal()
        got = wasserstein1(build_sketch(X, B), build_sketch(Y, B))
        worst_sorted = max(worst_sorted, abs(
            got - np.mean([_matching_w1(X[:, j], Y[:, j]) for j in range(D)])))
        worst_scipy = max(worst_scipy, abs(
            got - np.mean([wasserstein_distance(X[:, j], Y[:, j]) for j in range(D)])))
        if B <= 5:
            perm = np.mean([min(np.mean(np.abs(X[list(s), j] - Y[:, j]))
                                for s in itertools.permutations(range(B))) for j in range(D)])
            worst_perm = max(worst_perm, abs(got - perm))

    sym = neg = tri = 0
    for _ in range(1000):
        D = 3
        a, b, c = (build_sketch(rng.normal(size=(int(rng.integers(1, 9)), D))
                                * rng.uniform(0.2, 3.0), 16) for _ in range(3))
        ab, ba = wasserstein1(a, b), wasserstein1(b, a)
        sym += ab != ba
        neg += min(ab, wasserstein1(a, a)) < 0 or wasserstein1(a, a) != 0
        tri += wasserstein1(a, c) > ab + wasserstein1(b, c) + 1e-12
    ok = max(worst_sorted, worst_scipy, worst_perm) < 1e-12 and sym == neg == tri == 0
    report(capsys, 4, ok, f"1000 cases, max abs err vs sorted matching {worst_sorted:.1e}, "
                          f"vs scipy {worst_scipy:.1e}, vs permutation search {worst_perm:.1e} "
                          f"(< 1e-12); violations on 1000 triples: symmetry {sym}, "
                          f"non-negativity {neg}, triangle {tri}")


# ---------------------------------------------------------------------------
# 5. lookup table contract and records ablation
# ---------------------------------------------------------------------------


def _planted():
    cfg = load_config(CONFIGS / "planted.json")
    return cfg, generate_synthetic_task(cfg.task_config(), cfg.task.seed)


def test_c5_lookup_contract(capsys):
    cfg, task = _planted()
    seed = cfg.seeds[0]
    al, lab, unl = _initial_state(cfg, task, seed)
    evaluator = lambda l, c: proxy_performance(l, c, task, al.oracle)
    Q = al.table.Q

    table = build_table(task.pool_features, unl, lab, evaluator, 50, al.budget, Q, al.table.k,
                        rng=np.random.default_rng([seed, 1]))
    exact_ok = all(estimate_performance(table, r.sketch).value == r.perf and
                   not estimate_performance(table, r.sketch).fallback for r in table.records)

    rng = np.random.default_rng([seed, 2])
    convex_ok, n_est = True, 0
    for _ in range(100):
        ids = np.sort(rng.choice(unl, size=al.budget, replace=False))
        est = estimate_performance(table, build_sketch(task.pool_features[ids], Q))
        if est.fallback:
            convex_ok &= est.value is None and est.min_distance > table.tau
            continue
        n_est += 1
        w = np.array([wj for _, wj in est.used])
        perfs = np.array([table.records[j].perf for j, _ in est.used])
        convex_ok &= bool(np.all(w >= 0) and abs(w.sum() - 1) < 1e-12
                          and abs(est.value - w @ perfs) < 1e-12
                          and est.min_distance <= table.tau)
    far = QuantileSketch(table.records[0].sketch.quantiles + 100.0)
    far_est = estimate_performance(table, far)
    far_ok = far_est.fallback and far_est.value is None

    # records ablation: nested tables (one record stream truncated at M), same queries
    errs = []
    for M in (10, 25, 50):
        t = build_table(task.pool_features, unl, lab, evaluator, M, al.budget, Q, al.table.k,
                        rng=np.random.default_rng([seed, 1]))
        qrng = np.random.default_rng([seed, 3])
        e = []
        for _ in range(100):
            ids = np.sort(qrng.choice(unl, size=al.budget, replace=False))
            est = estimate_performance(t, build_sketch(task.pool_features[ids], Q),
                                       allow_fallback=False)
            e.append(abs(est.value - evaluator(lab, ids)))
        errs.append(float(np.median(e)))
    inversions = sum(errs[i + 1] > errs[i] for i in range(len(errs) - 1))
    ok = exact_ok and convex_ok and far_ok and inversions <= 1
    report(capsys, 5, ok, f"exact match {exact_ok}, convex combination {convex_ok} "
                          f"({n_est}/100 non-fallback), far query falls back {far_ok}; median "
                          f"error M=10/25/50: {errs[0]:.4f}/{errs[1]:.4f}/{errs[2]:.4f}, "
                          f"{inversions} inversion(s) (<= 1)")


# ---------------------------------------------------------------------------
# 6. lookup speed against direct proxy evaluation
# ---------------------------------------------------------------------------


def _median_time(fn, reps):
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def test_c6_lookup_speedup(capsys):
    cfg = load_config(CONFIGS / "default_prototype.json")
    task = generate_synthetic_task(cfg.task_config(), cfg.task.seed)
    al, lab, unl = _initial_state(cfg, task, cfg.seeds[0])
    assert task.n_pool == 1000 and task.pool_features.shape[1] == 32 and al.budget == 25
    evaluator = lambda l, c: proxy_performance(l, c, task, al.oracle)
    table = build_table(task.pool_features, unl, lab, evaluator, 50, al.budget, al.table.Q,
                        al.table.k, rng=np.random.default_rng(6))
    rng = np.random.default_rng(7)
    batches = [np.sort(rng.choice(unl, size=al.budget, replace=False)) for _ in range(100)]
    sketches = [build_sketch(task.pool_features[b], al.table.Q) for b in batches]
    estimate_performance(table, sketches[0])  # compile / warm caches

    t_est, t_full, t_direct = [], [], []
    for b, s in zip(batches, sketches):
        t_est.append(_median_time(lambda: estimate_performance(table, s), 5))
        t_full.append(_median_time(lambda: estimate_performance(
            table, build_sketch(task.pool_features[b], al.table.Q)), 5))
        t_direct.append(_median_time(lambda: evaluator(lab, b), 5))
    est_us = statistics.median(t_est) * 1e6
    full_us = statistics.median(t_full) * 1e6
    direct_us = statistics.median(t_direct) * 1e6
    speedup = direct_us / est_us
    report(capsys, 6, speedup >= 100,
           f"median estimate {est_us:.1f}us (with sketch {full_us:.1f}us), direct prototype "
           f"proxy {direct_us:.1f}us, speedup {speedup:.1f}x (>= 100x)")


# ---------------------------------------------------------------------------
# 7. headline benchmark on the planted coverage task
# ---------------------------------------------------------------------------


def test_c7_headline_benchmark(capsys, planted_bench):
    rows, summary = planted_bench
    cfg = load_config(CONFIGS / "planted.json")
    seeds = list(cfg.seeds)
    pair = next(p for p in summary["pairs"] if p["a"] == "mgral" and p["b"] == "random")
    means = {s["name"]: s["mean"] for s in summary["strategies"]}
    complete = all(
        sorted(final_perfs(rows, s)) == seeds
        and len([r for r in rows if r["strategy"] == s]) == len(seeds) * (cfg.al.cycles + 1)
        for s in ("entropy", "coreset"))
    runtime_min = sum(float(r["duration_ms"]) for r in rows) / 6e4
    ok = (means["mgral"] > means["random"] and pair["p_greater"] < 0.05 and complete
          and runtime_min < 30)
    report(capsys, 7, ok,
           f"{len(seeds)} seeds, final mean mgral {means['mgral']:.4f}, random "
           f"{means['random']:.4f}, entropy {means['entropy']:.4f}, coreset "
           f"{means['coreset']:.4f}; paired one-sided p = {pair['p_greater']:.2e} (< 0.05); "
           f"baselines complete {complete}; summed run time {runtime_min:.1f} min (< 30)")


# ---------------------------------------------------------------------------
# 8. proxy calibration
# ---------------------------------------------------------------------------


def test_c8_proxy_calibration(capsys):
    cfg = load_config(CONFIGS / "default_prototype.json")
    task = generate_synthetic_task(cfg.task_config(), cfg.task.seed)
    al, lab, unl = _initial_state(cfg, task, cfg.seeds[0])
    base = prototype_performance(lab, task)
    rng = np.random.default_rng(8)
    proxy_gain, true_gain = [], []
    for _ in range(50):
        b = np.sort(rng.choice(unl, size=al.budget, replace=False))
        proxy_gain.append(proxy_performance(lab, b, task, "prototype") - base)
        true_gain.append(prototype_performance(np.union1d(lab, b), task) - base)
    rho = float(spearmanr(proxy_gain, true_gain).statistic)
    report(capsys, 8, rho > 0.5,
           f"Spearman rho(proxy gain, true gain) over 50 batches = {rho:.3f} (> 0.5)")


# ---------------------------------------------------------------------------
# 9. determinism and persistence
# ---------------------------------------------------------------------------


def _csv_without_timing(path):
    return [{k: v for k, v in r.items() if k != "duration_ms"} for r in read_csv(path)]


def test_c9_determinism_and_persistence(capsys, tmp_path, planted_bench):
    quick = str(CONFIGS / "quick.json")
    same = True
    for s in ("mgral", "random", "entropy", "coreset"):
        for run in ("a", "b"):
            assert cli_main(["run", "--config", quick, "--strategy", s,
                             "--out", str(tmp_path / s / run), "--workers", "1"]) == 0
        same &= _csv_without_timing(tmp_path / s / "a" / "results.csv") == _csv_without_timing(
            tmp_path / s / "b" / "results.csv")

    cfg, task = _planted()
    al, lab, unl = _initial_state(cfg, task, 0)
    table = build_table(task.pool_features, unl, lab,
                        lambda l, c: proxy_performance(l, c, task, al.oracle), 50, al.budget,
                        al.table.Q, al.table.k, rng=np.random.default_rng(9))
    path = tmp_path / "t.alut.jsonl"
    save_table(table, path)
    roundtrip = load_table(path) == table

    rows, _ = planted_bench
    curves = {}
    for r in rows:
        curves.setdefault((r["strategy"], r["seed"]), []).append((int(r["cycle"]), float(r["perf"])))
    monotone = all(all(a[1] <= b[1] for a, b in zip(sorted(v), sorted(v)[1:]))
                   for v in curves.values())
    ok = same and roundtrip and monotone
    report(capsys, 9, ok, f"rerun CSVs identical (timing excluded) {same}; table roundtrip "
                          f"exact {roundtrip}; coverage non-decreasing on all {len(curves)} "
                          f"planted curves {monotone}")
