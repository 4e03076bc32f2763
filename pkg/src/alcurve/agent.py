"""LSTM sampling agent: scores a pool item by item, samples a budget-sized
subset, and learns from scalar rewards by REINFORCE.

Every pool item is one step of a single parameter-shared LSTM. Step ``i``
consumes ``[features_i, A_{i-1}]``, where ``A_{i-1}`` is the previous step's
score (``A_0 = 0`` with zero initial states). A shared two-layer decoder maps
the hidden state to a logit, and ``A_i = logistic(logit_i)``.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import kernels
from .kernels import sigmoid
from .numerics import AdamHyper, AdamState, adam_step, clip_by_global_norm

BASELINE_MODES = ("standard-ema", "paper-literal")


@dataclass(frozen=True)
class AgentConfig:
    feat_dim: int = 32
    hidden_dim: int = 64
    decoder_hidden: int = 32
    budget: int = 25
    temperature: float = 1.0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.feat_dim < 1 or self.hidden_dim < 1 or self.decoder_hidden < 1:
            raise ValueError("agent dimensions must be >= 1")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 500
    lr: float = 3.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    baseline_lambda: float = 0.5
    baseline_mode: str = "standard-ema"
    # "first" seeds the reference with the first reward; a number is used as is.
    baseline_init: object = "first"
    clip_norm: Optional[float] = 5.0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0.0 <= self.baseline_lambda <= 1.0:
            raise ValueError("baseline_lambda must lie in [0, 1]")
        if self.baseline_mode not in BASELINE_MODES:
            raise ValueError(f"baseline_mode must be one of {BASELINE_MODES}")
        if self.baseline_init != "first" and not np.isfinite(float(self.baseline_init)):
            raise ValueError("baseline_init must be 'first' or a finite number")

    @property
    def adam(self):
        return AdamHyper(self.lr, self.beta1, self.beta2, self.adam_eps)


_PARAM_FIELDS = ("Wx", "wa", "Wh", "b", "U1", "c1", "u2", "c2")


@dataclass
class AgentParams:
    """All learnable weights. Gate rows are ordered input, forget, cell, output."""

    Wx: np.ndarray  # (4H, d)
    wa: np.ndarray  # (4H,) weight of the previous score
    Wh: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)
    U1: np.ndarray  # (Dh, H)
    c1: np.ndarray  # (Dh,)
    u2: np.ndarray  # (Dh,)
    c2: float

    @classmethod
    def zeros(cls, cfg):
        H, d, Dh = cfg.hidden_dim, cfg.feat_dim, cfg.decoder_hidden
        return cls(
            Wx=np.zeros((4 * H, d)), wa=np.zeros(4 * H), Wh=np.zeros((4 * H, H)),
            b=np.zeros(4 * H), U1=np.zeros((Dh, H)), c1=np.zeros(Dh),
            u2=np.zeros(Dh), c2=0.0,
        )

    @classmethod
    def init(cls, cfg, rng):
        """Uniform weights in ``[-init_scale, init_scale]``, zero biases."""
        p = cls.zeros(cfg)
        s = cfg.init_scale
        for name in ("Wx", "wa", "Wh", "U1", "u2"):
            arr = getattr(p, name)
            arr[...] = rng.uniform(-s, s, size=arr.shape)
        return p

    @property
    def shapes(self):
        return [np.shape(getattr(self, f)) for f in _PARAM_FIELDS]

    @property
    def size(self):
        return int(sum(int(np.prod(s)) for s in self.shapes))

    def flat(self):
        return np.concatenate([np.ravel(getattr(self, f)) for f in _PARAM_FIELDS])

    @classmethod
    def from_flat(cls, cfg, vec):
        template = cls.zeros(cfg)
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (template.size,):
            raise ValueError(f"expected flat vector of length {template.size}, got {vec.shape}")
        out = {}
        pos = 0
        for name, shape in zip(_PARAM_FIELDS, template.shapes):
            n = int(np.prod(shape))
            chunk = vec[pos:pos + n]
            out[name] = float(chunk[0]) if shape == () else chunk.reshape(shape).copy()
            pos += n
        return cls(**out)

    def copy(self):
        return AgentParams(**{
            f: (getattr(self, f).copy() if f != "c2" else self.c2) for f in _PARAM_FIELDS
        })

    def dims(self):
        G, d = self.Wx.shape
        return d, G // 4, self.U1.shape[0]

    def check(self, cfg):
        if self.dims() != (cfg.feat_dim, cfg.hidden_dim, cfg.decoder_hidden):
            raise ValueError("AgentParams shapes do not match AgentConfig")


class Episode(NamedTuple):
    """One rollout. ``picks`` holds the sampled items in draw order."""

    order: np.ndarray
    logits: np.ndarray
    scores: np.ndarray
    mask: np.ndarray
    logprob: float
    picks: np.ndarray


class Selection(NamedTuple):
    mask: np.ndarray
    logprob: float
    picks: np.ndarray


@dataclass(frozen=True)
class BaselineTracker:
    ref: float = 0.0
    lam: float = 0.5
    mode: str = "standard-ema"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.mode not in BASELINE_MODES:
            raise ValueError(f"mode must be one of {BASELINE_MODES}")


def update_baseline(tracker, observed):
    """Moving-average reference update.

    ``standard-ema`` is the usual ``lam*ref + (1-lam)*observed``.
    ``paper-literal`` applies ``lam*ref + (1-lam)*(observed - ref)``, which for
    a constant input settles at half that input.
    """
    observed = float(observed)
    lam = tracker.lam
    if tracker.mode == "standard-ema":
        ref = lam * tracker.ref + (1.0 - lam) * observed
    else:
        ref = lam * tracker.ref + (1.0 - lam) * (observed - tracker.ref)
    return replace(tracker, ref=ref)


# ---------------------------------------------------------------------------
# single LSTM step (reference implementation, used by tests and as a statement of
# what the scan kernels compute per step)
# ---------------------------------------------------------------------------


def lstm_cell_forward(x, h, c, params):
    d, H, _ = params.dims()
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if x.shape != (d + 1,) or h.shape != (H,) or c.shape != (H,):
        raise ValueError(
            f"lstm_cell_forward expects x of size {d + 1} and h, c of size {H}; "
            f"got {x.shape}, {h.shape}, {c.shape}"
        )
    z = params.Wx @ x[:d] + params.wa * x[d] + params.Wh @ h + params.b
    i = sigmoid(z[:H])
    f = sigmoid(z[H:2 * H])
    g = np.tanh(z[2 * H:3 * H])
    o = sigmoid(z[3 * H:])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


def lstm_cell_backward(x, h, c, params, dh_new, dc_new=None):
    """Gradients of one step given upstream ``dh_new`` (and ``dc_new``).

    Returns ``(grads, dx, dh, dc)``; ``grads`` is an :class:`AgentParams`
    whose decoder entries are zero.
    """
    d, H, _ = params.dims()
    x = np.asarray(x, dtype=np.float64)
    z = params.Wx @ x[:d] + params.wa * x[d] + params.Wh @ h + params.b
    i = sigmoid(z[:H])
    f = sigmoid(z[H:2 * H])
    g = np.tanh(z[2 * H:3 * H])
    o = sigmoid(z[3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    dc_total = dh_new * o * (1.0 - tc * tc)
    if dc_new is not None:
        dc_total = dc_total + dc_new
    dz = np.concatenate((
        dc_total * g * i * (1.0 - i),
        dc_total * c * f * (1.0 - f),
        dc_total * i * (1.0 - g * g),
        dh_new * tc * o * (1.0 - o),
    ))
    grads = AgentParams(
        Wx=np.outer(dz, x[:d]), wa=dz * x[d], Wh=np.outer(dz, h), b=dz.copy(),
        U1=np.zeros_like(params.U1), c1=np.zeros_like(params.c1),
        u2=np.zeros_like(params.u2), c2=0.0,
    )
    dx = np.concatenate((params.Wx.T @ dz, [params.wa @ dz]))
    return grads, dx, params.Wh.T @ dz, dc_total * f


# ---------------------------------------------------------------------------
# full chain
# ---------------------------------------------------------------------------


@dataclass
class _ForwardCache:
    order: np.ndarray
    X: np.ndarray  # features in visit order
    acts: np.ndarray
    cs: np.ndarray
    hs: np.ndarray
    us: np.ndarray
    logits_ordered: np.ndarray
    scores_ordered: np.ndarray
    logits: np.ndarray = field(init=False)
    scores: np.ndarray = field(init=False)

    def __post_init__(self):
        n = self.order.shape[0]
        self.logits = np.empty(n)
        self.scores = np.empty(n)
        self.logits[self.order] = self.logits_ordered
        self.scores[self.order] = self.scores_ordered


def _check_order(order, n):
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
        raise ValueError("order must be a permutation of the pool positions")
    return order


def _forward(features, order, params):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("agent_forward needs a non-empty (N, d) feature matrix")
    d, _, _ = params.dims()
    if features.shape[1] != d:
        raise ValueError(f"feature dimension {features.shape[1]} != agent feat_dim {d}")
    order = _check_order(order, features.shape[0])
    X = np.ascontiguousarray(features[order])
    P = np.ascontiguousarray(X @ params.Wx.T + params.b)
    acts, cs, hs, us, logits, scores = kernels.lstm_scan_forward(
        P, params.wa, params.Wh, params.U1, params.c1, params.u2, float(params.c2)
    )
    return _ForwardCache(order, X, acts, cs, hs, us, logits, scores)


def agent_forward(features, order, params):
    """Score every pool item, visiting them in ``order``.

    Returns ``(logits, scores)`` indexed by original pool position.
    """
    cache = _forward(features, order, params)
    return cache.logits, cache.scores


def _backward(cache, dlogits, params):
    """Gradient of a loss w.r.t. params given its gradient w.r.t. logits
    (indexed by original position)."""
    dl_ordered = np.ascontiguousarray(dlogits[cache.order])
    dP, dwa, dWh, dU1, dc1, du2, dc2 = kernels.lstm_scan_backward(
        dl_ordered, cache.acts, cache.cs, cache.hs, cache.us, cache.scores_ordered,
        params.wa, params.Wh, params.U1, params.u2,
    )
    return AgentParams(dP.T @ cache.X, dwa, dWh, dP.sum(axis=0), dU1, dc1, du2, float(dc2))


# ---------------------------------------------------------------------------
# selection policies
# ---------------------------------------------------------------------------


def select_top_b(scores, B):
    """Binary mask of the ``B`` largest scores; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    if not 1 <= B <= n:
        raise ValueError(f"need 1 <= B <= N, got B={B}, N={n}")
    top = np.argsort(-scores, kind="stable")[:B]
    mask = np.zeros(n, dtype=np.int8)
    mask[top] = 1
    return mask


def _pl_terms(logits, picks, temperature):
    s = np.asarray(logits, dtype=np.float64) / temperature
    mx = s.max()
    w = np.exp(s - mx)
    picked = np.zeros(s.shape[0], dtype=bool)
    picked[picks] = True
    rest = w[~picked].sum()
    wp = w[picks]
    # mass still available at each draw, summed without subtraction
    remaining = rest + np.cumsum(wp[::-1])[::-1]
    return s, mx, w, picked, remaining


def plackett_luce_logprob(logits, picks, temperature=1.0):
    """Log-probability of drawing ``picks`` in that order without replacement."""
    s, mx, _, _, remaining = _pl_terms(logits, picks, temperature)
    return float(np.sum(s[picks] - mx - np.log(remaining)))


def plackett_luce_grad(logits, picks, temperature=1.0):
    """Gradient of :func:`plackett_luce_logprob` w.r.t. the logits."""
    _, _, w, picked, remaining = _pl_terms(logits, picks, temperature)
    inv = np.cumsum(1.0 / remaining)
    grad = -w * inv[-1]
    grad[picks] = 1.0 - w[picks] * inv
    grad[~picked] = -w[~picked] * inv[-1]
    return grad / temperature


def sample_selection(logits, B, temperature, rng):
    """Draw ``B`` distinct items, each with probability proportional to
    ``exp(logit / temperature)`` among the items not yet drawn.

    Uses the Gumbel top-k construction, which yields the same draw-order
    distribution as sequential sampling.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[0]
    if not 1 <= B <= n:
        raise ValueError(f"need 1 <= B <= N, got B={B}, N={n}")
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    keys = logits / temperature + rng.gumbel(size=n)
    picks = np.argsort(-keys, kind="stable")[:B]
    mask = np.zeros(n, dtype=np.int8)
    mask[picks] = 1
    logprob = min(plackett_luce_logprob(logits, picks, temperature), 0.0)
    return Selection(mask, logprob, picks)


def rollout(features, params, cfg, rng, order=None):
    """Forward pass plus one sampled selection."""
    n = np.shape(features)[0]
    if order is None:
        order = rng.permutation(n)
    cache = _forward(features, order, params)
    sel = sample_selection(cache.logits, cfg.budget, cfg.temperature, rng)
    ep = Episode(cache.order, cache.logits, cache.scores, sel.mask, sel.logprob, sel.picks)
    return ep, cache


def reinforce_grad(episode, reward, baseline, features, params, temperature=1.0, cache=None):
    """Flat gradient of ``-(reward - baseline) * logprob(episode)``.

    The gradient flows through the decoder and the whole LSTM chain,
    including every score fed back as the next step's input.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if (episode.order.shape != (n,) or episode.mask.shape != (n,)
            or episode.logits.shape != (n,)):
        raise ValueError("episode does not match the feature matrix (stale episode?)")
    advantage = float(reward) - float(baseline)
    if advantage == 0.0:
        return np.zeros(params.size)
    if cache is None:
        cache = _forward(features, episode.order, params)
    elif not np.array_equal(cache.order, episode.order):
        raise ValueError("forward cache was computed with a different visit order")
    dlogits = -advantage * plackett_luce_grad(cache.logits, episode.picks, temperature)
    return _backward(cache, dlogits, params).flat()


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HistoryEntry:
    iteration: int
    estimate: float
    advantage: float
    fallback: bool
    grad_norm: float


class EstimatorError(RuntimeError):
    def __init__(self, iteration, cause):
        super().__init__(f"performance estimator failed at iteration {iteration}: {cause!r}")
        self.iteration = iteration


def _call_estimator(estimator, ids):
    out = estimator(ids)
    if isinstance(out, tuple):
        value, fallback = out
        return float(value), bool(fallback)
    return float(out), False


def train_agent(pool_features, estimator: Callable, cfg: AgentConfig, train: TrainConfig,
                rng, params: Optional[AgentParams] = None):
    """Policy-gradient training of the sampling agent.

    ``estimator(ids)`` receives the sorted row indices of the sampled subset
    and returns a performance value, or ``(value, used_fallback)``.

    Returns ``(params, history)``.
    """
    pool_features = np.asarray(pool_features, dtype=np.float64)
    if params is None:
        params = AgentParams.init(cfg, rng)
    else:
        params = params.copy()
    params.check(cfg)
    history = []
    if train.iterations == 0:
        return params, history

    theta = params.flat()
    state = AdamState.zeros(theta.shape[0])
    init_ref = 0.0 if train.baseline_init == "first" else float(train.baseline_init)
    tracker = BaselineTracker(init_ref, train.baseline_lambda, train.baseline_mode)
    for it in range(train.iterations):
        episode, cache = rollout(pool_features, params, cfg, rng)
        ids = np.flatnonzero(episode.mask)
        try:
            reward, fallback = _call_estimator(estimator, ids)
        except Exception as exc:
            raise EstimatorError(it, exc) from exc
        if it == 0 and train.baseline_init == "first":
            tracker = replace(tracker, ref=reward)
        baseline = tracker.ref
        advantage = reward - baseline
        tracker = update_baseline(tracker, reward)
        grad = reinforce_grad(episode, reward, baseline, pool_features, params,
                              cfg.temperature, cache=cache)
        grad, norm = clip_by_global_norm(grad, train.clip_norm)
        theta, state = adam_step(theta, grad, state, train.adam)
        params = AgentParams.from_flat(cfg, theta)
        history.append(HistoryEntry(it, reward, advantage, fallback, norm))
    return params, history


def inference_scores(features, params, rng, passes=1):
    """Mean scores over ``passes`` seeded visit orders."""
    n = np.shape(features)[0]
    total = np.zeros(n)
    orders = []
    for _ in range(passes):
        order = rng.permutation(n)
        orders.append(order)
        total += agent_forward(features, order, params)[1]
    return total / passes, orders
