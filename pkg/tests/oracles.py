"""Independent oracles used by the test suite.

Everything here is deliberately written the slow, obvious way: explicit
Python loops over matrix entries and forward-difference evaluation of the
loss function. None of it calls the library's vectorized forward or
backward code paths, so agreement is evidence, not tautology.
"""

from __future__ import annotations

import math

import numpy as np

FD_STEP = 1e-5


def numeric_gradient(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a scalar function, elementwise."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f()
        flat[i] = orig - h
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * h)
    return g


def gradients_close(analytic: np.ndarray, numeric: np.ndarray,
                    rtol: float, atol: float) -> tuple[bool, float]:
    """Check |a - n| <= atol + rtol * max(|a|, |n|) entrywise.

    Returns (ok, worst) where worst is the largest violation ratio
    |a - n| / (atol + rtol * max(|a|, |n|)); <= 1 means pass.
    """
    diff = np.abs(analytic - numeric)
    bound = atol + rtol * np.maximum(np.abs(analytic), np.abs(numeric))
    ratio = diff / bound
    worst = float(ratio.max()) if ratio.size else 0.0
    return worst <= 1.0, worst


# ---- explicit-loop linear algebra ------------------------------------------


def loop_matmul(a, b):
    n, k = len(a), len(a[0])
    m = len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i][t] * b[t][j]
            out[i][j] = s
    return out


def loop_add(a, b):
    return [[a[i][j] + b[i][j] for j in range(len(a[0]))] for i in range(len(a))]


def loop_softmax_rows(x):
    out = []
    for row in x:
        m = max(row)
        e = [math.exp(v - m) for v in row]
        s = sum(e)
        out.append([v / s for v in e])
    return out


def loop_sigmoid_scalar(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


# ---- context-aware attention, equation by equation ---------------------------


def loop_mca2(h, c, p) -> np.ndarray:
    """Explicit-loop forward of the full context-aware attention block
    (single head). ``p`` maps parameter names to list-of-list matrices:
    w_q, w_k, w_v, ctx_k, ctx_v, gate_k_text, gate_k_ctx, gate_v_text,
    gate_v_ctx.
    """
    n = len(h)
    d = len(p["w_q"][0])

    q = loop_matmul(h, p["w_q"])
    k = loop_matmul(h, p["w_k"])
    v = loop_matmul(h, p["w_v"])
    ck = loop_matmul(c, p["ctx_k"])
    cv = loop_matmul(c, p["ctx_v"])

    gate_k, gate_v = [], []
    for i in range(n):
        zk = sum(k[i][j] * p["gate_k_text"][j][0] for j in range(d))
        zk += sum(ck[i][j] * p["gate_k_ctx"][j][0] for j in range(d))
        gate_k.append(loop_sigmoid_scalar(zk))
        zv = sum(v[i][j] * p["gate_v_text"][j][0] for j in range(d))
        zv += sum(cv[i][j] * p["gate_v_ctx"][j][0] for j in range(d))
        gate_v.append(loop_sigmoid_scalar(zv))

    k_mixed = [[(1.0 - gate_k[i]) * k[i][j] + gate_k[i] * ck[i][j] for j in range(d)]
               for i in range(n)]
    v_mixed = [[(1.0 - gate_v[i]) * v[i][j] + gate_v[i] * cv[i][j] for j in range(d)]
               for i in range(n)]

    inv = 1.0 / math.sqrt(d)
    logits = [[sum(q[i][t] * k_mixed[j][t] for t in range(d)) * inv for j in range(n)]
              for i in range(n)]
    weights = loop_softmax_rows(logits)
    out = [[sum(weights[i][j] * v_mixed[j][t] for j in range(n)) for t in range(d)]
           for i in range(n)]
    return np.array(out)


def loop_gif(h, h_audio, h_video, w_audio, w_video, b_audio, b_video,
             sigmoid_gates: bool = False) -> np.ndarray:
    """Explicit-loop forward of the gated fusion layer."""
    n, d = len(h), len(h[0])
    out = [[0.0] * d for _ in range(n)]
    for i in range(n):
        cat_a = list(h[i]) + list(h_audio[i])
        cat_v = list(h[i]) + list(h_video[i])
        for j in range(d):
            ga = sum(cat_a[t] * w_audio[t][j] for t in range(2 * d)) + b_audio[0][j]
            gv = sum(cat_v[t] * w_video[t][j] for t in range(2 * d)) + b_video[0][j]
            if sigmoid_gates:
                ga = loop_sigmoid_scalar(ga)
                gv = loop_sigmoid_scalar(gv)
            out[i][j] = h[i][j] + ga * h_audio[i][j] + gv * h_video[i][j]
    return np.array(out)


def loop_attend(q, k, v, d_k) -> np.ndarray:
    n, d = len(q), len(q[0])
    m = len(k)
    inv = 1.0 / math.sqrt(d_k)
    logits = [[sum(q[i][t] * k[j][t] for t in range(d)) * inv for j in range(m)]
              for i in range(n)]
    weights = loop_softmax_rows(logits)
    dv = len(v[0])
    return np.array([[sum(weights[i][j] * v[j][t] for j in range(m)) for t in range(dv)]
                     for i in range(n)])


def loop_bucket_means(frames, n) -> np.ndarray:
    """Temporal alignment oracle: contiguous buckets, larger buckets first;
    fewer frames than rows repeats frames over row groups."""
    f = len(frames)
    d = len(frames[0])

    def sizes(total, groups):
        base, rem = divmod(total, groups)
        return [base + 1] * rem + [base] * (groups - rem)

    out = []
    if f >= n:
        start = 0
        for s in sizes(f, n):
            rows = frames[start:start + s]
            out.append([sum(r[j] for r in rows) / s for j in range(d)])
            start += s
    else:
        for j, s in enumerate(sizes(n, f)):
            out.extend([list(frames[j])] * s)
    return np.array(out)
