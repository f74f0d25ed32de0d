"""Slow, loop-based reference implementations used only by the tests."""

import math

import numpy as np


def conv2d_loops(x, w, b=None):
    """Direct zero-padded 'same' cross-correlation, C x H x W input."""
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros((o, h, wd))
    for oc in range(o):
        for i in range(h):
            for j in range(wd):
                acc = 0.0 if b is None else float(b[oc])
                for ic in range(c):
                    for di in range(kh):
                        for dj in range(kw):
                            ii, jj = i + di - ph, j + dj - pw
                            if 0 <= ii < h and 0 <= jj < wd:
                                acc += x[ic, ii, jj] * w[oc, ic, di, dj]
                out[oc, i, j] = acc
    return out


def maxpool2_loops(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2))
    for ch in range(c):
        for i in range(h // 2):
            for j in range(w // 2):
                out[ch, i, j] = max(x[ch, 2 * i + a, 2 * j + b] for a in range(2) for b in range(2))
    return out


def transposed_conv2_scatter(x, w, b=None):
    """Scatter every input pixel through the C_in x C_out x 2 x 2 kernel."""
    ci, h, wd = x.shape
    co = w.shape[1]
    out = np.zeros((co, 2 * h, 2 * wd))
    for c in range(ci):
        for i in range(h):
            for j in range(wd):
                for o in range(co):
                    for a in range(2):
                        for bb in range(2):
                            out[o, 2 * i + a, 2 * j + bb] += x[c, i, j] * w[c, o, a, bb]
    if b is not None:
        out += np.asarray(b)[:, None, None]
    return out


def slice_pass_down_loops(x, w):
    """Row-by-row SCNN downward pass, C x H x W input, C x k kernel."""
    c, h, wd = x.shape
    k = w.shape[1]
    y = x.astype(np.float64).copy()
    for i in range(1, h):
        for ch in range(c):
            for j in range(wd):
                acc = 0.0
                for t in range(k):
                    jj = j + t - k // 2
                    if 0 <= jj < wd:
                        acc += y[ch, i - 1, jj] * w[ch, t]
                y[ch, i, j] += max(acc, 0.0)
    return y


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def scalar_lstm(xs, wx, wh, b, layers_in=None):
    """Single-channel LSTM with gates (i, f, o, g); returns hidden states."""
    h = c = 0.0
    hs = []
    for x in xs:
        zi = wx[0] * x + wh[0] * h + b[0]
        zf = wx[1] * x + wh[1] * h + b[1]
        zo = wx[2] * x + wh[2] * h + b[2]
        zg = wx[3] * x + wh[3] * h + b[3]
        c = sigmoid(zf) * c + sigmoid(zi) * math.tanh(zg)
        h = sigmoid(zo) * math.tanh(c)
        hs.append(h)
    return hs


def confusion_loop(pred, truth):
    tp = fp = fn = tn = 0
    for p, t in zip(np.ravel(pred), np.ravel(truth)):
        if p and t:
            tp += 1
        elif p and not t:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def dbscan_bruteforce(points, eps, min_pts):
    """O(n^2) DBSCAN with an explicit distance matrix.

    Core points are linked when within eps; each connected component of that
    graph is a cluster.  A border point joins the cluster of the earliest
    (lowest-index) core neighbour's component in discovery order.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    labels = [-1] * n
    if n == 0:
        return np.array(labels)
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    adj = d <= eps
    core = adj.sum(1) >= min_pts
    comp = [-1] * n
    ncomp = 0
    for i in range(n):
        if core[i] and comp[i] < 0:
            stack = [i]
            comp[i] = ncomp
            while stack:
                j = stack.pop()
                for k in range(n):
                    if adj[j, k] and core[k] and comp[k] < 0:
                        comp[k] = ncomp
                        stack.append(k)
            ncomp += 1
    for i in range(n):
        if core[i]:
            labels[i] = comp[i]
    for i in range(n):
        if not core[i]:
            cands = [comp[k] for k in range(n) if adj[i, k] and core[k]]
            if cands:
                labels[i] = min(cands)
    return np.array(labels)


def same_partition(a, b, core_mask=None):
    """Whether two labelings agree up to renaming (optionally only on ``core_mask`` points)."""
    a, b = np.asarray(a), np.asarray(b)
    if core_mask is not None:
        a, b = a[core_mask], b[core_mask]
    if not np.array_equal(a == -1, b == -1):
        return False
    fwd, bwd = {}, {}
    for x, y in zip(a, b):
        if x == -1:
            continue
        if fwd.setdefault(x, y) != y or bwd.setdefault(y, x) != x:
            return False
    return True
