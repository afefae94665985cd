"""Compiled forward/reverse sweeps for an MLP vector field under explicit RK.

The network is described by parallel arrays, one entry per linear layer:
weight offset, bias offset, input width, output width and the activation
applied after it (0 none, 1 tanh, 2 elu). Weights are stored row-major as
(in, out) so a layer computes ``x @ W + b``.

Forward stores, for every step and stage, the stage input followed by every
layer's post-activation output. That is enough to rebuild all local
derivatives: tanh' = 1 - a**2 and, for ELU, a < 0 exactly when the input was
negative, where the slope is a + 1.
"""

import numpy as np
from numba import njit

ACT_NONE = 0
ACT_TANH = 1
ACT_ELU = 2


@njit(cache=True)
def _mlp_eval(theta, w_off, b_off, din, dout, act, x, buf, base):
    """Evaluate the MLP on ``x``; write layer outputs into ``buf[base:]``."""
    n_layers = w_off.shape[0]
    pos = base
    prev = pos  # offset of current input in buf, or -1 for x
    use_x = True
    for layer in range(n_layers):
        wo = w_off[layer]
        bo = b_off[layer]
        ni = din[layer]
        no = dout[layer]
        a = act[layer]
        for j in range(no):
            buf[pos + j] = theta[bo + j]
        for i in range(ni):
            xi = x[i] if use_x else buf[prev + i]
            base = wo + i * no
            for j in range(no):
                buf[pos + j] += xi * theta[base + j]
        if a == 1:
            for j in range(no):
                buf[pos + j] = np.tanh(buf[pos + j])
        elif a == 2:
            for j in range(no):
                z = buf[pos + j]
                if z < 0.0:
                    buf[pos + j] = np.expm1(z)
        prev = pos
        pos += no
        use_x = False
    return prev  # offset of the network output


@njit(cache=True)
def rk_forward(theta, w_off, b_off, din, dout, act, y0, times, A, Bw, store, out):
    """Integrate with the explicit tableau (A, Bw); fill ``store`` and ``out``.

    ``out[n]`` is the state at ``times[n + 1]``. Returns the index of the
    first step producing a non-finite state, or -1.
    """
    d = y0.shape[0]
    n_steps = times.shape[0] - 1
    n_stages = Bw.shape[0]
    width = store.shape[2]
    y = y0.copy()
    K = np.zeros((n_stages, d))
    Y = np.zeros(d)
    for n in range(n_steps):
        h = times[n + 1] - times[n]
        for s in range(n_stages):
            for k in range(d):
                acc = y[k]
                for j in range(s):
                    if A[s, j] != 0.0:
                        acc += h * A[s, j] * K[j, k]
                Y[k] = acc
            row = store[n, s]
            for k in range(d):
                row[k] = Y[k]
            o = _mlp_eval(theta, w_off, b_off, din, dout, act, Y, row, d)
            for k in range(d):
                K[s, k] = row[o + k]
        bad = False
        for k in range(d):
            acc = y[k]
            for s in range(n_stages):
                if Bw[s] != 0.0:
                    acc += h * Bw[s] * K[s, k]
            y[k] = acc
            out[n, k] = acc
            if not np.isfinite(acc):
                bad = True
        if bad:
            return n
    _ = width
    return -1


@njit(cache=True)
def _mlp_vjp(theta, w_off, b_off, din, dout, act, row, d, gout, gtheta, gx, work):
    """Accumulate parameter cotangents into ``gtheta``; write input cotangent to ``gx``."""
    n_layers = w_off.shape[0]
    # offsets of each layer's output inside row
    offs = np.empty(n_layers + 1, dtype=np.int64)
    offs[0] = 0
    pos = d
    for layer in range(n_layers):
        offs[layer + 1] = pos
        pos += dout[layer]
    # work holds the running cotangent; start with the output cotangent
    no_last = dout[n_layers - 1]
    g = work[0]
    for j in range(no_last):
        g[j] = gout[j]
    cur = 0
    for layer in range(n_layers - 1, -1, -1):
        wo = w_off[layer]
        bo = b_off[layer]
        ni = din[layer]
        no = dout[layer]
        a = act[layer]
        ao = offs[layer + 1]
        g = work[cur]
        for j in range(no):
            if a == 1:
                v = row[ao + j]
                g[j] *= 1.0 - v * v
            elif a == 2:
                v = row[ao + j]
                if v < 0.0:
                    g[j] *= v + 1.0
        xo = offs[layer]
        gn = work[1 - cur]
        for i in range(ni):
            xi = row[xo + i]
            acc = 0.0
            base = wo + i * no
            for j in range(no):
                gtheta[base + j] += xi * g[j]
                acc += theta[base + j] * g[j]
            gn[i] = acc
        for j in range(no):
            gtheta[bo + j] += g[j]
        cur = 1 - cur
    g = work[cur]
    for i in range(d):
        gx[i] = g[i]


@njit(cache=True)
def rk_backward(theta, w_off, b_off, din, dout, act, times, A, Bw, store, gstates):
    """Reverse sweep through every solver step; returns (dL/dtheta, dL/dy0)."""
    n_steps = times.shape[0] - 1
    n_stages = Bw.shape[0]
    d = gstates.shape[1]
    maxw = d
    for layer in range(dout.shape[0]):
        if dout[layer] > maxw:
            maxw = dout[layer]
        if din[layer] > maxw:
            maxw = din[layer]
    work = np.zeros((2, maxw))
    gtheta = np.zeros(theta.shape[0])
    gy = np.zeros(d)
    gY = np.zeros((n_stages, d))
    gK = np.zeros(d)
    for n in range(n_steps - 1, -1, -1):
        h = times[n + 1] - times[n]
        for k in range(d):
            gy[k] += gstates[n, k]
        for s in range(n_stages - 1, -1, -1):
            nonzero = Bw[s] != 0.0
            for k in range(d):
                gK[k] = h * Bw[s] * gy[k]
            for i in range(s + 1, n_stages):
                if A[i, s] != 0.0:
                    nonzero = True
                    for k in range(d):
                        gK[k] += h * A[i, s] * gY[i, k]
            if not nonzero:
                for k in range(d):
                    gY[s, k] = 0.0
                continue
            _mlp_vjp(theta, w_off, b_off, din, dout, act, store[n, s], d, gK, gtheta, gY[s], work)
        for s in range(n_stages):
            for k in range(d):
                gy[k] += gY[s, k]
    return gtheta, gy
