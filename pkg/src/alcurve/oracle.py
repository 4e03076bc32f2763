"""Synthetic pools and the performance functions the agent is rewarded by.

Two task metrics are provided:

* coverage: weighted fraction of cells holding at least ``coverage_min``
  labeled points. Label-free, monotone and submodular.
* prototype: eval-set accuracy of a nearest-centroid classifier fitted on
  the labeled points.

:func:`proxy_performance` estimates what a candidate batch would add
without looking at its labels.
"""

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

import numpy as np

TASK_FORMAT = "alcurve-task"
TASK_VERSION = 1
ORACLE_KINDS = ("coverage", "prototype")
CELL_WEIGHTINGS = ("uniform", "zipf", "inverse_size", "inverse_class")


class TaskConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TaskConfig:
    n_pool: int = 1000
    n_eval: int = 1000
    dim: int = 32
    n_classes: int = 5
    n_cells: int = 50
    spread: float = 1.0
    # scale of the class means; smaller means more class overlap
    class_sep: float = 0.8
    anchor_spread: float = 1.0
    imbalance: Optional[Tuple[float, ...]] = None
    cell_weighting: str = "uniform"
    cell_skew: float = 1.0
    coverage_min: int = 1

    def __post_init__(self):
        for name in ("n_pool", "n_eval", "dim", "n_classes", "n_cells", "coverage_min"):
            if getattr(self, name) < 1:
                raise TaskConfigError(f"{name} must be >= 1")
        if self.n_classes > self.n_pool:
            raise TaskConfigError(
                f"n_classes ({self.n_classes}) exceeds n_pool ({self.n_pool})"
            )
        if self.spread < 0 or self.class_sep < 0 or self.anchor_spread < 0:
            raise TaskConfigError("spreads and class_sep must be non-negative")
        if self.cell_weighting not in CELL_WEIGHTINGS:
            raise TaskConfigError(f"cell_weighting must be one of {CELL_WEIGHTINGS}")
        if self.imbalance is not None:
            if len(self.imbalance) != self.n_classes:
                raise TaskConfigError("imbalance needs one ratio per class")
            if any(r < 0 for r in self.imbalance) or sum(self.imbalance) <= 0:
                raise TaskConfigError("imbalance ratios must be non-negative, not all zero")
            object.__setattr__(self, "imbalance", tuple(float(r) for r in self.imbalance))

    def class_probs(self):
        if self.imbalance is None:
            return np.full(self.n_classes, 1.0 / self.n_classes)
        r = np.asarray(self.imbalance, dtype=np.float64)
        return r / r.sum()


@dataclass
class SyntheticTask:
    cfg: TaskConfig
    seed: int
    pool_features: np.ndarray
    pool_labels: np.ndarray
    eval_features: np.ndarray
    eval_labels: np.ndarray
    anchors: np.ndarray
    cells: np.ndarray
    cell_weights: np.ndarray
    _cell_sizes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._cell_sizes = np.bincount(self.cells, minlength=self.n_cells)

    @property
    def n_pool(self):
        return self.pool_features.shape[0]

    @property
    def n_cells(self):
        return self.cell_weights.shape[0]

    @property
    def n_classes(self):
        return self.cfg.n_classes

    @property
    def coverage_min(self):
        return self.cfg.coverage_min

    @property
    def cell_sizes(self):
        return self._cell_sizes

    def __eq__(self, other):
        if not isinstance(other, SyntheticTask):
            return NotImplemented
        return (self.cfg == other.cfg and self.seed == other.seed and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("pool_features", "pool_labels", "eval_features", "eval_labels",
                      "anchors", "cells", "cell_weights")
        ))


def _cell_weights(cfg, sizes, anchor_class):
    """Normalized cell importance.

    uniform: equal. zipf: ``(g + 1) ** -skew`` by cell index. inverse_size:
    ``size ** -skew``. inverse_class: ``p_c ** -skew`` for the class ``c``
    owning the anchor. Empty cells get zero weight except under uniform and
    zipf.
    """
    G = sizes.shape[0]
    nz = sizes > 0
    if cfg.cell_weighting == "uniform":
        w = np.ones(G)
    elif cfg.cell_weighting == "zipf":
        w = (np.arange(G) + 1.0) ** (-cfg.cell_skew)
    elif cfg.cell_weighting == "inverse_size":
        w = np.zeros(G)
        w[nz] = sizes[nz].astype(np.float64) ** (-cfg.cell_skew)
    else:
        w = np.where(nz, cfg.class_probs()[anchor_class] ** (-cfg.cell_skew), 0.0)
    return w / w.sum()


def _nearest(points, centers):
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def generate_synthetic_task(cfg, seed):
    """Gaussian class clusters plus a Voronoi partition into weighted cells.

    Cell anchors are assigned to classes round-robin and jittered around
    the class mean, so every class owns ``n_cells / n_classes`` cells; a
    rare class therefore gets small cells.
    """
    if not isinstance(cfg, TaskConfig):
        cfg = TaskConfig(**cfg)
    rng = np.random.default_rng(seed)
    C, d = cfg.n_classes, cfg.dim
    means = rng.normal(0.0, cfg.class_sep, size=(C, d))
    probs = cfg.class_probs()

    pool_labels = rng.choice(C, size=cfg.n_pool, p=probs)
    pool = means[pool_labels] + cfg.spread * rng.normal(size=(cfg.n_pool, d))
    eval_labels = rng.choice(C, size=cfg.n_eval, p=probs)
    evals = means[eval_labels] + cfg.spread * rng.normal(size=(cfg.n_eval, d))

    anchor_class = np.arange(cfg.n_cells) % C
    anchors = means[anchor_class] + cfg.anchor_spread * rng.normal(size=(cfg.n_cells, d))
    cells = _nearest(pool, anchors)
    sizes = np.bincount(cells, minlength=cfg.n_cells)
    weights = _cell_weights(cfg, sizes, anchor_class)
    return SyntheticTask(cfg, int(seed), pool, pool_labels.astype(np.int64), evals,
                         eval_labels.astype(np.int64), anchors, cells.astype(np.int64), weights)


# ---------------------------------------------------------------------------
# evaluators
# ---------------------------------------------------------------------------


def _ids(ids, task, what="labeled_ids"):
    arr = np.unique(np.asarray(ids, dtype=np.int64).ravel())
    if arr.size and (arr[0] < 0 or arr[-1] >= task.n_pool):
        raise KeyError(f"{what} contains ids outside the pool [0, {task.n_pool})")
    return arr


def coverage_performance(labeled_ids, task):
    """Total weight of cells containing at least ``coverage_min`` labeled points."""
    ids = _ids(labeled_ids, task)
    counts = np.bincount(task.cells[ids], minlength=task.n_cells)
    value = float(task.cell_weights[counts >= task.coverage_min].sum())
    return min(max(value, 0.0), 1.0)


def _centroids(features, labels, n_classes):
    d = features.shape[1]
    sums = np.zeros((n_classes, d))
    np.add.at(sums, labels, features)
    counts = np.bincount(labels, minlength=n_classes)
    present = counts > 0
    cents = sums[present] / counts[present, None]
    return cents, np.flatnonzero(present)


def _sq_dists(points, centers):
    return ((points ** 2).sum(1)[:, None] - 2.0 * points @ centers.T
            + (centers ** 2).sum(1)[None, :])


def _nearest_centroid_accuracy(features, labels, task):
    if labels.size == 0:
        return 0.0
    cents, classes = _centroids(features, labels, task.n_classes)
    pred = classes[np.argmin(_sq_dists(task.eval_features, cents), axis=1)]
    return float(np.mean(pred == task.eval_labels))


def prototype_performance(labeled_ids, task):
    """Eval accuracy of nearest-centroid prediction from the labeled points.

    Classes without a labeled point are never predicted; no labels gives 0.
    """
    ids = _ids(labeled_ids, task)
    return _nearest_centroid_accuracy(task.pool_features[ids], task.pool_labels[ids], task)


def true_performance(labeled_ids, task, kind):
    if kind == "coverage":
        return coverage_performance(labeled_ids, task)
    if kind == "prototype":
        return prototype_performance(labeled_ids, task)
    raise ValueError(f"unknown oracle kind {kind!r}; expected one of {ORACLE_KINDS}")


def pseudo_label(labeled_ids, candidate_ids, task):
    """Hard labels for candidates from the labeled-only centroid model."""
    cents, classes = _centroids(task.pool_features[labeled_ids],
                                task.pool_labels[labeled_ids], task.n_classes)
    return classes[np.argmin(_sq_dists(task.pool_features[candidate_ids], cents), axis=1)]


def proxy_performance(labeled_ids, candidate_ids, task, kind):
    """Label-free estimate of the performance after adding ``candidate_ids``.

    coverage: candidates count toward coverage directly (exact, since the
    metric needs no labels). prototype: candidates receive pseudo-labels from
    the labeled-only model, centroids are refit on labeled plus
    pseudo-labeled points, and eval accuracy is reported.
    """
    lab = _ids(labeled_ids, task)
    cand = _ids(candidate_ids, task, "candidate_ids")
    if np.intersect1d(lab, cand).size:
        raise ValueError("candidate_ids overlap labeled_ids")
    if kind == "coverage":
        return coverage_performance(np.concatenate([lab, cand]), task)
    if kind != "prototype":
        raise ValueError(f"unknown oracle kind {kind!r}; expected one of {ORACLE_KINDS}")
    if cand.size == 0 or lab.size == 0:
        return prototype_performance(lab, task)
    pseudo = pseudo_label(lab, cand, task)
    feats = np.concatenate([task.pool_features[lab], task.pool_features[cand]])
    labels = np.concatenate([task.pool_labels[lab], pseudo])
    return _nearest_centroid_accuracy(feats, labels, task)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def task_to_dict(task):
    cfg = asdict(task.cfg)
    if cfg["imbalance"] is not None:
        cfg["imbalance"] = list(cfg["imbalance"])
    return {
        "format": TASK_FORMAT,
        "version": TASK_VERSION,
        "seed": task.seed,
        "config": cfg,
        "pool_features": task.pool_features.tolist(),
        "pool_labels": task.pool_labels.tolist(),
        "eval_features": task.eval_features.tolist(),
        "eval_labels": task.eval_labels.tolist(),
        "anchors": task.anchors.tolist(),
        "cells": task.cells.tolist(),
        "cell_weights": task.cell_weights.tolist(),
    }


def task_from_dict(doc):
    if doc.get("format") != TASK_FORMAT:
        raise ValueError("not an alcurve task document")
    if doc.get("version") != TASK_VERSION:
        raise ValueError(f"unsupported task version {doc.get('version')!r}")
    cfg = dict(doc["config"])
    if cfg.get("imbalance") is not None:
        cfg["imbalance"] = tuple(cfg["imbalance"])
    d = cfg["dim"]
    return SyntheticTask(
        TaskConfig(**cfg), int(doc["seed"]),
        np.asarray(doc["pool_features"], dtype=np.float64).reshape(-1, d),
        np.asarray(doc["pool_labels"], dtype=np.int64),
        np.asarray(doc["eval_features"], dtype=np.float64).reshape(-1, d),
        np.asarray(doc["eval_labels"], dtype=np.int64),
        np.asarray(doc["anchors"], dtype=np.float64).reshape(-1, d),
        np.asarray(doc["cells"], dtype=np.int64),
        np.asarray(doc["cell_weights"], dtype=np.float64),
    )


def save_task(task, path):
    with open(path, "w") as fh:
        json.dump(task_to_dict(task), fh, separators=(",", ":"))
        fh.write("\n")


def load_task(path):
    with open(path) as fh:
        return task_from_dict(json.load(fh))
