"""Hot numerical loops, each in a numba and a pure-numpy flavour.

The public names at the bottom of the module dispatch on
``alcurve._accel.USE_NUMBA``. Both flavours are importable directly so the
test suite and ``benchmarks/bench_kernels.py`` can compare them.

Gate layout of the LSTM pre-activation rows is ``[input, forget, cell,
output]``, each block ``H`` wide.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@njit
def _sig(x):
    return 0.5 * (1.0 + math.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# LSTM chain: forward scan
# ---------------------------------------------------------------------------


def lstm_scan_forward_numpy(P, wa, Wh, U1, c1, u2, c2):
    """Run the score-feedback LSTM chain over pre-projected inputs.

    Parameters
    ----------
    P : ndarray, shape (N, 4H)
        ``features @ Wx.T + b`` for the items in visit order.
    wa : ndarray, shape (4H,)
        Weight of the previous score in every gate.
    Wh : ndarray, shape (4H, H)
    U1, c1, u2, c2 : decoder weights (Dh, H), (Dh,), (Dh,), float

    Returns
    -------
    acts, cs, hs, us, logits, scores
        Gate activations (N, 4H), cell states (N, H), hidden states (N, H),
        decoder hidden activations (N, Dh), logits (N,) and scores (N,).
    """
    N, G = P.shape
    H = G // 4
    Dh = U1.shape[0]
    acts = np.empty((N, G))
    cs = np.empty((N, H))
    hs = np.empty((N, H))
    us = np.empty((N, Dh))
    logits = np.empty(N)
    scores = np.empty(N)
    h = np.zeros(H)
    c = np.zeros(H)
    a = 0.0
    for t in range(N):
        z = P[t] + wa * a + Wh @ h
        ig = sigmoid(z[:H])
        fg = sigmoid(z[H:2 * H])
        gg = np.tanh(z[2 * H:3 * H])
        og = sigmoid(z[3 * H:])
        c = fg * c + ig * gg
        h = og * np.tanh(c)
        u = np.tanh(U1 @ h + c1)
        logit = float(u2 @ u) + c2
        a = float(sigmoid(logit))
        acts[t, :H] = ig
        acts[t, H:2 * H] = fg
        acts[t, 2 * H:3 * H] = gg
        acts[t, 3 * H:] = og
        cs[t] = c
        hs[t] = h
        us[t] = u
        logits[t] = logit
        scores[t] = a
    return acts, cs, hs, us, logits, scores


@njit
def lstm_scan_forward_numba(P, wa, Wh, U1, c1, u2, c2):
    N = P.shape[0]
    G = P.shape[1]
    H = G // 4
    Dh = U1.shape[0]
    acts = np.empty((N, G))
    cs = np.empty((N, H))
    hs = np.empty((N, H))
    us = np.empty((N, Dh))
    logits = np.empty(N)
    scores = np.empty(N)
    h = np.zeros(H)
    c = np.zeros(H)
    z = np.empty(G)
    a = 0.0
    for t in range(N):
        zh = np.dot(Wh, h)
        for r in range(G):
            z[r] = P[t, r] + wa[r] * a + zh[r]
        for k in range(H):
            ig = _sig(z[k])
            fg = _sig(z[H + k])
            gg = math.tanh(z[2 * H + k])
            og = _sig(z[3 * H + k])
            acts[t, k] = ig
            acts[t, H + k] = fg
            acts[t, 2 * H + k] = gg
            acts[t, 3 * H + k] = og
            c[k] = fg * c[k] + ig * gg
            h[k] = og * math.tanh(c[k])
            cs[t, k] = c[k]
            hs[t, k] = h[k]
        logit = c2
        uh = np.dot(U1, h)
        for j in range(Dh):
            u = math.tanh(uh[j] + c1[j])
            us[t, j] = u
            logit += u2[j] * u
        logits[t] = logit
        a = _sig(logit)
        scores[t] = a
    return acts, cs, hs, us, logits, scores


# ---------------------------------------------------------------------------
# LSTM chain: backward scan
# ---------------------------------------------------------------------------


def lstm_scan_backward_numpy(dlogits, acts, cs, hs, us, scores, wa, Wh, U1, u2):
    """Backpropagate logit gradients through the chain.

    Includes the path through each score into the next step's input.
    Returns ``(dP, dwa, dWh, dU1, dc1, du2, dc2)``; gradients for ``Wx``
    and the gate bias follow from ``dP`` by one matrix product and a sum.
    """
    N, G = acts.shape
    H = G // 4
    dP = np.empty((N, G))
    dwa = np.zeros(G)
    dWh = np.zeros((G, H))
    dU1 = np.zeros_like(U1)
    dc1 = np.zeros(U1.shape[0])
    du2 = np.zeros(U1.shape[0])
    dc2 = 0.0
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    dA = 0.0
    zeros_h = np.zeros(H)
    for t in range(N - 1, -1, -1):
        a = scores[t]
        dl = dlogits[t] + dA * a * (1.0 - a)
        dc2 += dl
        u = us[t]
        du2 += dl * u
        dpre = dl * u2 * (1.0 - u * u)
        dc1 += dpre
        dU1 += np.outer(dpre, hs[t])
        dh = dh_next + U1.T @ dpre
        ig = acts[t, :H]
        fg = acts[t, H:2 * H]
        gg = acts[t, 2 * H:3 * H]
        og = acts[t, 3 * H:]
        if t > 0:
            c_prev, h_prev, a_prev = cs[t - 1], hs[t - 1], scores[t - 1]
        else:
            c_prev, h_prev, a_prev = zeros_h, zeros_h, 0.0
        tc = np.tanh(cs[t])
        dc = dh * og * (1.0 - tc * tc) + dc_next
        dz = np.concatenate((
            dc * gg * ig * (1.0 - ig),
            dc * c_prev * fg * (1.0 - fg),
            dc * ig * (1.0 - gg * gg),
            dh * tc * og * (1.0 - og),
        ))
        dP[t] = dz
        dwa += dz * a_prev
        dWh += np.outer(dz, h_prev)
        dc_next = dc * fg
        dh_next = Wh.T @ dz
        dA = float(wa @ dz)
    return dP, dwa, dWh, dU1, dc1, du2, dc2


@njit
def lstm_scan_backward_numba(dlogits, acts, cs, hs, us, scores, wa, Wh, U1, u2):
    N = acts.shape[0]
    G = acts.shape[1]
    H = G // 4
    Dh = U1.shape[0]
    dP = np.empty((N, G))
    dwa = np.zeros(G)
    dWh = np.zeros((G, H))
    dU1 = np.zeros((Dh, H))
    dc1 = np.zeros(Dh)
    du2 = np.zeros(Dh)
    dc2 = 0.0
    dh = np.zeros(H)
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    dA = 0.0
    for t in range(N - 1, -1, -1):
        a = scores[t]
        dl = dlogits[t] + dA * a * (1.0 - a)
        dc2 += dl
        for k in range(H):
            dh[k] = dh_next[k]
        for j in range(Dh):
            u = us[t, j]
            du2[j] += dl * u
            dpre = dl * u2[j] * (1.0 - u * u)
            dc1[j] += dpre
            for k in range(H):
                dU1[j, k] += dpre * hs[t, k]
                dh[k] += U1[j, k] * dpre
        for k in range(H):
            ig = acts[t, k]
            fg = acts[t, H + k]
            gg = acts[t, 2 * H + k]
            og = acts[t, 3 * H + k]
            c_prev = cs[t - 1, k] if t > 0 else 0.0
            tc = math.tanh(cs[t, k])
            dck = dh[k] * og * (1.0 - tc * tc) + dc_next[k]
            dP[t, k] = dck * gg * ig * (1.0 - ig)
            dP[t, H + k] = dck * c_prev * fg * (1.0 - fg)
            dP[t, 2 * H + k] = dck * ig * (1.0 - gg * gg)
            dP[t, 3 * H + k] = dh[k] * tc * og * (1.0 - og)
            dc_next[k] = dck * fg
        a_prev = scores[t - 1] if t > 0 else 0.0
        dA = 0.0
        for k in range(H):
            dh_next[k] = 0.0
        for r in range(G):
            d = dP[t, r]
            dwa[r] += d * a_prev
            dA += wa[r] * d
            if t > 0:
                for k in range(H):
                    dWh[r, k] += d * hs[t - 1, k]
                    dh_next[k] += Wh[r, k] * d
            else:
                for k in range(H):
                    dh_next[k] += Wh[r, k] * d
    return dP, dwa, dWh, dU1, dc1, du2, dc2


# ---------------------------------------------------------------------------
# Sliced 1-D Wasserstein distances between quantile sketches
# ---------------------------------------------------------------------------


def w1_to_many_numpy(query, stack):
    """Distances from one ``(D, Q)`` sketch to each of ``M`` stacked sketches."""
    return np.abs(stack - query[None, :, :]).mean(axis=(1, 2))


@njit
def w1_to_many_numba(query, stack):
    M = stack.shape[0]
    D = stack.shape[1]
    Q = stack.shape[2]
    out = np.empty(M)
    for m in range(M):
        s = 0.0
        for i in range(D):
            for j in range(Q):
                s += abs(stack[m, i, j] - query[i, j])
        out[m] = s / (D * Q)
    return out


def w1_pairwise_numpy(stack):
    """Condensed upper-triangle distances, ``i < j`` in row-major order."""
    M = stack.shape[0]
    parts = [w1_to_many_numpy(stack[i], stack[i + 1:]) for i in range(M - 1)]
    return np.concatenate(parts) if parts else np.empty(0)


@njit
def w1_pairwise_numba(stack):
    M = stack.shape[0]
    out = np.empty(M * (M - 1) // 2)
    pos = 0
    for i in range(M - 1):
        d = w1_to_many_numba(stack[i], stack[i + 1:])
        for j in range(d.shape[0]):
            out[pos] = d[j]
            pos += 1
    return out


if USE_NUMBA:
    lstm_scan_forward = lstm_scan_forward_numba
    lstm_scan_backward = lstm_scan_backward_numba
    w1_to_many = w1_to_many_numba
    w1_pairwise = w1_pairwise_numba
else:
    lstm_scan_forward = lstm_scan_forward_numpy
    lstm_scan_backward = lstm_scan_backward_numpy
    w1_to_many = w1_to_many_numpy
    w1_pairwise = w1_pairwise_numpy
