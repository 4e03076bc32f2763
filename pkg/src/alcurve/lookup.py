"""Lookup table of pre-computed batch performances.

Each record stores a per-dimension quantile sketch of one random candidate
batch together with the proxy performance measured for it. A new batch is
scored by inverse-distance weighting over its nearest records, with the
distance being the per-dimension 1-D Wasserstein-1 averaged over
dimensions. Queries farther than ``mu_d - tau_mult * sigma_d`` from every
record are flagged so the caller evaluates them directly.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import kernels

TABLE_FORMAT = "alcurve-lookup"
TABLE_VERSION = 1
TABLE_SUFFIX = ".alut.jsonl"


class LookupFileError(Exception):
    """Base class for table file problems."""


class TableNotFoundError(LookupFileError, FileNotFoundError):
    pass


class TableFormatError(LookupFileError, ValueError):
    pass


class TableVersionError(LookupFileError, ValueError):
    pass


@dataclass(frozen=True)
class QuantileSketch:
    quantiles: np.ndarray  # (D, Q)

    @property
    def dim(self):
        return self.quantiles.shape[0]

    @property
    def n_levels(self):
        return self.quantiles.shape[1]

    @property
    def levels(self):
        return quantile_levels(self.n_levels)

    def __eq__(self, other):
        return isinstance(other, QuantileSketch) and np.array_equal(self.quantiles, other.quantiles)


def quantile_levels(Q):
    return (np.arange(Q) + 0.5) / Q


def build_sketch(batch_features, Q=64):
    """Empirical quantile function of every column at levels ``(j + 0.5) / Q``.

    Order statistic ``i`` (1-based) sits at probability ``(i - 0.5) / B`` and
    values in between are linearly interpolated; levels outside the first or
    last position take the extreme value.
    """
    X = np.asarray(batch_features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("build_sketch needs a non-empty (B, D) batch")
    if Q < 1:
        raise ValueError("Q must be >= 1")
    B = X.shape[0]
    xs = np.sort(X, axis=0)
    pos = np.clip(quantile_levels(Q) * B - 0.5, 0.0, B - 1.0)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, B - 1)
    frac = pos - lo
    q = xs[lo] + frac[:, None] * (xs[hi] - xs[lo])
    return QuantileSketch(np.ascontiguousarray(q.T))


def wasserstein1(a, b):
    """Mean over dimensions of the discretized 1-D W1 between two sketches."""
    if a.quantiles.shape != b.quantiles.shape:
        raise ValueError(f"sketch shapes differ: {a.quantiles.shape} vs {b.quantiles.shape}")
    return float(np.abs(a.quantiles - b.quantiles).mean())


@dataclass
class LookupRecord:
    sketch: QuantileSketch
    perf: float
    member_ids: np.ndarray
    seed: Optional[int] = None
    cycle_index: int = 0

    def __eq__(self, other):
        return (isinstance(other, LookupRecord) and self.sketch == other.sketch
                and self.perf == other.perf and np.array_equal(self.member_ids, other.member_ids)
                and self.seed == other.seed and self.cycle_index == other.cycle_index)


@dataclass
class Estimate:
    value: Optional[float]
    min_distance: float
    fallback: bool
    used: List[Tuple[int, float]] = field(default_factory=list)


@dataclass
class LookupTable:
    records: List[LookupRecord]
    mu_d: Optional[float]
    sigma_d: Optional[float]
    k: int = 5
    eps_w: float = 1e-9
    tau_mult: float = 1.0
    _stack: Optional[np.ndarray] = field(default=None, init=False, repr=False, compare=False)

    @property
    def size(self):
        return len(self.records)

    @property
    def n_levels(self):
        return self.records[0].sketch.n_levels if self.records else None

    @property
    def tau(self):
        if self.mu_d is None or self.sigma_d is None:
            return None
        return self.mu_d - self.tau_mult * self.sigma_d

    def stack(self):
        if self._stack is None or self._stack.shape[0] != len(self.records):
            self._stack = np.stack([r.sketch.quantiles for r in self.records])
        return self._stack

    def append(self, record):
        """Add a record. Threshold statistics stay those of the built table."""
        self.records.append(record)
        self._stack = None

    def __eq__(self, other):
        if not isinstance(other, LookupTable):
            return NotImplemented
        return (self.records == other.records and self.mu_d == other.mu_d
                and self.sigma_d == other.sigma_d and self.k == other.k
                and self.eps_w == other.eps_w and self.tau_mult == other.tau_mult)


def distance_stats(sketches):
    """Mean and population std of all pairwise record distances (None if M < 2)."""
    if len(sketches) < 2:
        return None, None
    d = kernels.w1_pairwise(np.stack([s.quantiles for s in sketches]))
    return float(d.mean()), float(d.std())


def build_table(pool_features, unlabeled_ids, labeled_ids, evaluator, M, B, Q=64, k=5,
                eps_w=1e-9, rng=None, tau_mult=1.0, cycle_index=0, workers=1):
    """Evaluate ``M`` uniformly random ``B``-subsets of the unlabeled pool.

    ``evaluator(labeled_ids, candidate_ids)`` returns the proxy performance.
    Subsets come from per-record seeds drawn up front, so the table is the
    same for any ``workers`` count.
    """
    unlabeled_ids = np.asarray(unlabeled_ids, dtype=np.int64)
    labeled_ids = np.asarray(labeled_ids, dtype=np.int64)
    if M < 1:
        raise ValueError("M must be >= 1")
    if B > unlabeled_ids.shape[0]:
        raise ValueError(f"budget {B} exceeds the {unlabeled_ids.shape[0]} unlabeled ids")
    if rng is None:
        rng = np.random.default_rng()
    seeds = [int(s) for s in rng.integers(0, 2 ** 63 - 1, size=M)]
    pool_features = np.asarray(pool_features, dtype=np.float64)

    def make(seed):
        sub_rng = np.random.default_rng(seed)
        members = np.sort(sub_rng.choice(unlabeled_ids, size=B, replace=False))
        perf = float(evaluator(labeled_ids, members))
        return LookupRecord(build_sketch(pool_features[members], Q), perf, members,
                            seed, cycle_index)

    if workers > 1 and M > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(make, seeds))
    else:
        records = [make(s) for s in seeds]
    mu, sigma = distance_stats([r.sketch for r in records])
    return LookupTable(records, mu, sigma, min(k, M), eps_w, tau_mult)


def estimate_performance(table, query, allow_fallback=True):
    """Inverse-distance-weighted performance of the ``k`` nearest records.

    An exact sketch match returns that record's value. With
    ``allow_fallback=False`` the weighted value is always returned, which
    is how the table's raw accuracy is measured.
    """
    if not table.records:
        raise ValueError("lookup table is empty")
    stack = table.stack()
    q = np.ascontiguousarray(query.quantiles, dtype=np.float64)
    if q.shape != stack.shape[1:]:
        raise ValueError(f"query sketch shape {q.shape} != table sketch shape {stack.shape[1:]}")
    dists = kernels.w1_to_many(q, stack)
    nearest = np.argsort(dists, kind="stable")
    dmin = float(dists[nearest[0]])
    if dmin == 0.0:
        j = int(nearest[0])
        return Estimate(table.records[j].perf, 0.0, False, [(j, 1.0)])
    tau = table.tau
    if allow_fallback and (tau is None or dmin > tau):
        return Estimate(None, dmin, True, [])
    idx = nearest[:min(table.k, len(table.records))]
    w = 1.0 / (dists[idx] + table.eps_w)
    w = w / w.sum()
    perfs = np.array([table.records[j].perf for j in idx])
    value = float(np.clip(w @ perfs, perfs.min(), perfs.max()))
    return Estimate(value, dmin, False, [(int(j), float(wj)) for j, wj in zip(idx, w)])


# ---------------------------------------------------------------------------
# JSON-lines persistence
# ---------------------------------------------------------------------------


def _opt_float(x):
    return None if x is None else float(x)


def save_table(table, path):
    header = {
        "format": TABLE_FORMAT,
        "version": TABLE_VERSION,
        "M": table.size,
        "Q": table.n_levels,
        "k": table.k,
        "eps_w": table.eps_w,
        "tau_mult": table.tau_mult,
        "mu_d": _opt_float(table.mu_d),
        "sigma_d": _opt_float(table.sigma_d),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, allow_nan=False) + "\n")
        for r in table.records:
            line = {
                "perf": r.perf,
                "member_ids": [int(i) for i in r.member_ids],
                "seed": r.seed,
                "cycle_index": r.cycle_index,
                "quantiles": r.sketch.quantiles.tolist(),
            }
            fh.write(json.dumps(line, allow_nan=False) + "\n")


def _parse_line(text, lineno, path):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TableFormatError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise TableFormatError(f"{path}:{lineno}: expected a JSON object")
    return obj


def load_table(path):
    try:
        fh = open(path)
    except FileNotFoundError as exc:
        raise TableNotFoundError(f"lookup table not found: {path}") from exc
    with fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise TableFormatError(f"{path}: empty file")
    header = _parse_line(lines[0], 1, path)
    if header.get("format") != TABLE_FORMAT:
        raise TableFormatError(f"{path}: not an alcurve lookup table")
    if header.get("version") != TABLE_VERSION:
        raise TableVersionError(
            f"{path}: table version {header.get('version')!r}, supported {TABLE_VERSION}"
        )
    records = []
    try:
        Q = header["Q"]
        for lineno, text in enumerate(lines[1:], start=2):
            obj = _parse_line(text, lineno, path)
            quant = np.asarray(obj["quantiles"], dtype=np.float64)
            if quant.ndim != 2 or quant.shape[1] != Q:
                raise TableFormatError(f"{path}:{lineno}: quantiles must be (D, {Q})")
            records.append(LookupRecord(
                QuantileSketch(quant), float(obj["perf"]),
                np.asarray(obj["member_ids"], dtype=np.int64),
                None if obj["seed"] is None else int(obj["seed"]), int(obj["cycle_index"]),
            ))
        if len(records) != header["M"]:
            raise TableFormatError(f"{path}: header says M={header['M']}, found {len(records)}")
        mu = header["mu_d"]
        sigma = header["sigma_d"]
        table = LookupTable(records, None if mu is None else float(mu),
                            None if sigma is None else float(sigma), int(header["k"]),
                            float(header["eps_w"]), float(header["tau_mult"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, LookupFileError):
            raise
        raise TableFormatError(f"{path}: invalid table content ({exc!r})") from exc
    if any(not math.isfinite(r.perf) for r in records):
        raise TableFormatError(f"{path}: non-finite perf value")
    return table
