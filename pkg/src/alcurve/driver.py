"""Pool-based active-learning loop and the selection strategies it compares."""

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from .agent import AgentConfig, TrainConfig, inference_scores, select_top_b, train_agent
from .lookup import LookupRecord, build_sketch, build_table, estimate_performance
from .oracle import ORACLE_KINDS, proxy_performance, true_performance

log = logging.getLogger(__name__)

STRATEGIES = ("mgral", "random", "entropy", "coreset")


@dataclass(frozen=True)
class TableConfig:
    M: int = 50
    Q: int = 64
    k: int = 5
    eps_w: float = 1e-9
    tau_mult: float = 1.0
    append_fallback: bool = True

    def __post_init__(self):
        if self.M < 1 or self.Q < 1 or self.k < 1:
            raise ValueError("table M, Q and k must be >= 1")
        if not self.eps_w > 0:
            raise ValueError("eps_w must be > 0")


@dataclass(frozen=True)
class ALConfig:
    initial_labeled: int = 50
    budget: int = 25
    cycles: int = 5
    strategy: str = "random"
    oracle: str = "coverage"
    agent: AgentConfig = field(default_factory=AgentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    table: TableConfig = field(default_factory=TableConfig)
    seed: int = 0
    inference_passes: int = 1
    warm_start: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; valid: {', '.join(STRATEGIES)}")
        if self.oracle not in ORACLE_KINDS:
            raise ValueError(f"unknown oracle {self.oracle!r}; valid: {', '.join(ORACLE_KINDS)}")
        if self.initial_labeled < 0 or self.budget < 1 or self.cycles < 0:
            raise ValueError("need initial_labeled >= 0, budget >= 1, cycles >= 0")
        if self.inference_passes < 1:
            raise ValueError("inference_passes must be >= 1")

    def check_pool(self, n_pool):
        need = self.initial_labeled + self.cycles * self.budget
        if need > n_pool:
            raise ValueError(
                f"initial_labeled + cycles * budget = {need} exceeds the pool size {n_pool}"
            )


@dataclass(frozen=True)
class ALState:
    labeled_ids: np.ndarray
    unlabeled_ids: np.ndarray
    cycle: int
    current_perf: float

    @classmethod
    def start(cls, labeled_ids, n_pool, perf):
        lab = np.unique(np.asarray(labeled_ids, dtype=np.int64))
        return cls(lab, np.setdiff1d(np.arange(n_pool), lab), 0, float(perf))


@dataclass
class CycleLog:
    cycle: int
    labeled_size: int
    perf: float
    selected: List[int]
    train_iterations: int = 0
    fallback_count: int = 0
    durations_ms: Dict[str, float] = field(default_factory=dict)
    strategy: str = ""
    seed: int = 0
    agent_params: Optional[object] = field(default=None, repr=False, compare=False)

    @property
    def duration_ms(self):
        return float(sum(self.durations_ms.values()))

    def to_dict(self):
        d = asdict(self)
        d.pop("agent_params")
        return d


# ---------------------------------------------------------------------------
# baseline strategies
# ---------------------------------------------------------------------------


def _check_budget(unlabeled_ids, B):
    if B > len(unlabeled_ids):
        raise ValueError(f"budget {B} exceeds the {len(unlabeled_ids)} unlabeled ids")
    if B < 1:
        raise ValueError("budget must be >= 1")


def baseline_random(unlabeled_ids, B, rng):
    _check_budget(unlabeled_ids, B)
    return np.sort(rng.choice(np.asarray(unlabeled_ids, dtype=np.int64), size=B, replace=False))


def class_probabilities(features, labeled_features, labeled_labels):
    """Softmax over negative Euclidean distances to the labeled class centroids."""
    classes = np.unique(labeled_labels)
    if classes.size == 0:
        raise ValueError("no labeled centroids available")
    cents = np.stack([labeled_features[labeled_labels == c].mean(axis=0) for c in classes])
    dist = np.sqrt(np.maximum(
        ((features[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2), 0.0))
    logits = -dist
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def baseline_entropy(unlabeled_ids, labeled_ids, task, B):
    """Highest predictive entropy first; ties to the lower id."""
    unl = np.asarray(unlabeled_ids, dtype=np.int64)
    lab = np.asarray(labeled_ids, dtype=np.int64)
    _check_budget(unl, B)
    if lab.size == 0:
        raise ValueError("entropy sampling needs at least one labeled point")
    p = class_probabilities(task.pool_features[unl], task.pool_features[lab],
                            task.pool_labels[lab])
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=1)
    order = np.lexsort((unl, -ent))
    return unl[order[:B]]


def baseline_coreset(unlabeled_ids, labeled_ids, pool_features, B):
    """k-center greedy. Returns ids in pick order."""
    unl = np.asarray(unlabeled_ids, dtype=np.int64)
    lab = np.asarray(labeled_ids, dtype=np.int64)
    _check_budget(unl, B)
    X = np.asarray(pool_features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    U = X[unl]
    mind = np.full(unl.shape[0], np.inf)
    for start in range(0, lab.shape[0], 256):
        chunk = X[lab[start:start + 256]]
        d = np.sqrt(((U[:, None, :] - chunk[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
        np.minimum(mind, d, out=mind)
    taken = np.zeros(unl.shape[0], dtype=bool)
    picks = []
    for _ in range(B):
        cand = np.where(taken, -np.inf, mind)
        # first maximum is the lowest id since unl is sorted; with nothing
        # labeled yet every distance is inf and the lowest id is taken
        j = int(np.argmax(cand))
        picks.append(j)
        taken[j] = True
        np.minimum(mind, np.sqrt(((U - U[j]) ** 2).sum(axis=1)), out=mind)
    return unl[np.asarray(picks, dtype=np.int64)]


# ---------------------------------------------------------------------------
# cycle and experiment
# ---------------------------------------------------------------------------


def agent_features(task):
    """Per-dimension z-scored pool features fed to the agent."""
    X = task.pool_features
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - X.mean(axis=0)) / sd


class _TableEstimator:
    """Reward callback for agent training: table lookup, direct proxy on fallback."""

    def __init__(self, table, task, labeled_ids, unlabeled_ids, kind, Q, append, cycle):
        self.table = table
        self.task = task
        self.labeled = labeled_ids
        self.unlabeled = unlabeled_ids
        self.kind = kind
        self.Q = Q
        self.append = append
        self.cycle = cycle
        self.fallbacks = 0

    def __call__(self, local_ids):
        ids = self.unlabeled[local_ids]
        sketch = build_sketch(self.task.pool_features[ids], self.Q)
        est = estimate_performance(self.table, sketch)
        if not est.fallback:
            return est.value, False
        self.fallbacks += 1
        value = proxy_performance(self.labeled, ids, self.task, self.kind)
        if self.append:
            self.table.append(LookupRecord(sketch, value, np.sort(ids), None, self.cycle))
        return value, True


def _select_mgral(state, task, cfg, rng, init_params=None, feats=None):
    B = cfg.budget
    rng_table, rng_train, rng_infer = rng.spawn(3)
    timings = {}
    lab, unl = state.labeled_ids, state.unlabeled_ids
    kind = cfg.oracle

    t0 = time.perf_counter()
    table = build_table(
        task.pool_features, unl, lab, lambda l, c: proxy_performance(l, c, task, kind),
        cfg.table.M, B, cfg.table.Q, cfg.table.k, cfg.table.eps_w, rng_table,
        cfg.table.tau_mult, state.cycle, cfg.workers,
    )
    timings["table"] = (time.perf_counter() - t0) * 1e3

    if feats is None:
        feats = agent_features(task)
    agent_cfg = replace(cfg.agent, feat_dim=task.pool_features.shape[1], budget=B)
    estimator = _TableEstimator(table, task, lab, unl, kind, cfg.table.Q,
                                cfg.table.append_fallback, state.cycle)
    t0 = time.perf_counter()
    params, history = train_agent(feats[unl], estimator, agent_cfg, cfg.train, rng_train,
                                  params=init_params if cfg.warm_start else None)
    timings["train"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    scores, _ = inference_scores(feats[unl], params, rng_infer, cfg.inference_passes)
    selected = unl[select_top_b(scores, B).astype(bool)]
    timings["select"] = (time.perf_counter() - t0) * 1e3
    return selected, len(history), estimator.fallbacks, timings, params


def run_cycle(state, strategy, task, cfg, rng, init_params=None, feats=None):
    """Select one batch, reveal its labels, and re-measure performance.

    Returns ``(new_state, CycleLog)``.
    """
    B = cfg.budget
    if len(state.unlabeled_ids) < B:
        raise ValueError(
            f"only {len(state.unlabeled_ids)} unlabeled ids left, budget is {B}"
        )
    iters, fallbacks, params = 0, 0, None
    t0 = time.perf_counter()
    if strategy == "mgral":
        selected, iters, fallbacks, timings, params = _select_mgral(
            state, task, cfg, rng, init_params, feats)
    else:
        if strategy == "random":
            selected = baseline_random(state.unlabeled_ids, B, rng)
        elif strategy == "entropy":
            selected = baseline_entropy(state.unlabeled_ids, state.labeled_ids, task, B)
        elif strategy == "coreset":
            selected = baseline_coreset(state.unlabeled_ids, state.labeled_ids,
                                        task.pool_features, B)
        else:
            raise ValueError(f"unknown strategy {strategy!r}; valid: {', '.join(STRATEGIES)}")
        timings = {"select": (time.perf_counter() - t0) * 1e3}

    selected = np.asarray(selected, dtype=np.int64)
    if (np.unique(selected).size != B
            or not np.isin(selected, state.unlabeled_ids).all()):
        raise AssertionError("strategy returned an invalid selection")

    t0 = time.perf_counter()
    labeled = np.union1d(state.labeled_ids, selected)
    unlabeled = np.setdiff1d(state.unlabeled_ids, selected)
    perf = true_performance(labeled, task, cfg.oracle)
    timings["evaluate"] = (time.perf_counter() - t0) * 1e3

    new_state = ALState(labeled, unlabeled, state.cycle + 1, perf)
    entry = CycleLog(
        cycle=new_state.cycle, labeled_size=int(labeled.size), perf=perf,
        selected=[int(i) for i in selected], train_iterations=iters,
        fallback_count=fallbacks, durations_ms=timings, strategy=strategy,
        seed=cfg.seed, agent_params=params,
    )
    return new_state, entry


def run_experiment(cfg, task):
    """Full run: seeded initial labeled set, then ``cfg.cycles`` cycles.

    Returns one :class:`CycleLog` per cycle, preceded by the cycle-0 entry.
    """
    n = task.n_pool
    cfg.check_pool(n)
    root = np.random.SeedSequence(cfg.seed)
    init_ss, *cycle_ss = root.spawn(cfg.cycles + 1)
    init_rng = np.random.default_rng(init_ss)
    initial = np.sort(init_rng.choice(n, size=cfg.initial_labeled, replace=False))
    t0 = time.perf_counter()
    perf0 = true_performance(initial, task, cfg.oracle)
    state = ALState.start(initial, n, perf0)
    logs = [CycleLog(0, int(initial.size), perf0, [int(i) for i in initial],
                     durations_ms={"evaluate": (time.perf_counter() - t0) * 1e3},
                     strategy=cfg.strategy, seed=cfg.seed)]
    feats = agent_features(task) if cfg.strategy == "mgral" else None
    params = None
    for c in range(cfg.cycles):
        state, entry = run_cycle(state, cfg.strategy, task, cfg,
                                 np.random.default_rng(cycle_ss[c]), params, feats)
        params = entry.agent_params
        log.info("strategy=%s seed=%d cycle=%d labeled=%d perf=%.4f fallbacks=%d",
                 cfg.strategy, cfg.seed, entry.cycle, entry.labeled_size, entry.perf,
                 entry.fallback_count)
        logs.append(entry)
    return logs
