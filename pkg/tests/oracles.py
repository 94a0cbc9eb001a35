"""Independent reference implementations used as test oracles.

Everything here is written for clarity, not speed: explicit loops and
direct comparisons instead of the vectorised code under test.
"""

import math

import numpy as np

from gazeband import embedder


# metrics ----------------------------------------------------------------------

def sweep(genuine, impostor):
    """(threshold, FAR, FRR) for +inf, every distinct score (descending), -inf.

    Exhaustive: every threshold is compared against every score.
    """
    g = np.asarray(genuine, dtype=np.float64)
    i = np.asarray(impostor, dtype=np.float64)
    scores = sorted(set(g.tolist()) | set(i.tolist()), reverse=True)
    out = []
    for t in [math.inf] + scores + [-math.inf]:
        out.append((t, np.count_nonzero(i >= t) / len(i), np.count_nonzero(g < t) / len(g)))
    return out


def eer_oracle(genuine, impostor, pts=None):
    pts = sweep(genuine, impostor) if pts is None else pts
    for j, (_, far, frr) in enumerate(pts):
        if far - frr >= 0:
            if far == frr:
                return 100.0 * far
            _, far0, frr0 = pts[j - 1]
            d0, d1 = far0 - frr0, far - frr
            w = d0 / (d0 - d1)
            return 100.0 * (far0 + w * (far - far0))
    raise AssertionError("FAR - FRR never turns non-negative")


def frr_at_far_oracle(genuine, impostor, target, pts=None):
    """FRR (%) at the lowest threshold whose FAR is at most ``target``."""
    pts = sweep(genuine, impostor) if pts is None else pts
    ok = [(t, frr) for t, far, frr in pts if far <= target]
    t, frr = min(ok, key=lambda p: p[0])
    return 100.0 * frr


def d_prime_oracle(genuine, impostor):
    def mean_var(x):
        m = math.fsum(x) / len(x)
        return m, math.fsum((v - m) ** 2 for v in x) / (len(x) - 1)
    mg, vg = mean_var(genuine)
    mi, vi = mean_var(impostor)
    return abs(mg - mi) / math.sqrt((vg + vi) / 2)


# multi-similarity loss ------------------------------------------------------------

def mined_sets(S, labels, i, epsilon):
    n = len(labels)
    pos = [j for j in range(n) if j != i and labels[j] == labels[i]]
    neg = [j for j in range(n) if labels[j] != labels[i]]
    if not pos or not neg:
        return [], []
    min_p = min(S[i][j] for j in pos)
    max_n = max(S[i][j] for j in neg)
    return ([j for j in pos if S[i][j] < max_n + epsilon],
            [j for j in neg if S[i][j] > min_p - epsilon])


def ms_loss_oracle(emb, labels, alpha=2.0, beta=50.0, base=0.5, epsilon=0.1):
    e = np.asarray(emb, dtype=np.float64)
    u = e / np.linalg.norm(e, axis=1, keepdims=True)
    S = (u @ u.T).tolist()
    total = 0.0
    for i in range(len(e)):
        P, N = mined_sets(S, labels, i, epsilon)
        if P:
            total += math.log1p(sum(math.exp(-alpha * (S[i][j] - base)) for j in P)) / alpha
        if N:
            total += math.log1p(sum(math.exp(beta * (S[i][j] - base)) for j in N)) / beta
    return total / len(e)


def ms_mining_signature(emb, labels, epsilon=0.1):
    e = np.asarray(emb, dtype=np.float64)
    u = e / np.linalg.norm(e, axis=1, keepdims=True)
    S = (u @ u.T).tolist()
    return tuple(tuple(map(tuple, mined_sets(S, labels, i, epsilon))) for i in range(len(e)))


# finite differences ------------------------------------------------------------

def rel_err(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def embedder_gradcheck(params, x, upstream, coords, eps=1e-4):
    """Central differences of sum(upstream * forward(params, x)) over ``coords``.

    ``coords`` are flat parameter indices.  A coordinate whose +/-eps
    perturbation flips any ReLU (changes the sign pattern of the activations)
    lies on a kink where the derivative is undefined; it is reported as None.
    Returns a list of (index, analytic, numeric) with numeric None on kinks.
    """
    emb, cache = embedder.forward(params, x)
    grads = embedder.backward(params, cache, upstream).flat()
    base = params.flat()
    pattern = cache.buf > 0

    def objective(vec):
        p = params.from_flat(vec)
        e, c = embedder.forward(p, x)
        return float(np.sum(upstream * e)), c.buf > 0

    out = []
    for i in coords:
        v = base.copy()
        v[i] += eps
        fp, pp = objective(v)
        v[i] = base[i] - eps
        fm, pm = objective(v)
        if not (np.array_equal(pp, pattern) and np.array_equal(pm, pattern)):
            out.append((i, float(grads[i]), None))
            continue
        out.append((i, float(grads[i]), (fp - fm) / (2 * eps)))
    return out


def ms_gradcheck(emb, labels, loss_fn, coords, eps=1e-4):
    """Central differences of the MS loss w.r.t. embedding entries.

    Entries whose perturbation changes the mined pair sets sit on a
    discontinuity of the mining rule and come back with numeric None.
    """
    emb = np.asarray(emb, dtype=np.float64)
    _, grad = loss_fn(emb, labels)
    sig = ms_mining_signature(emb, labels)
    out = []
    for (r, c) in coords:
        ep, em = emb.copy(), emb.copy()
        ep[r, c] += eps
        em[r, c] -= eps
        if ms_mining_signature(ep, labels) != sig or ms_mining_signature(em, labels) != sig:
            out.append(((r, c), float(grad[r, c]), None))
            continue
        num = (loss_fn(ep, labels)[0] - loss_fn(em, labels)[0]) / (2 * eps)
        out.append(((r, c), float(grad[r, c]), num))
    return out


# convolution ------------------------------------------------------------------

def dense_layer_reference(x, w, b, dilation):
    """relu(dilated 'same' convolution) by explicit loops, zero padding."""
    B, cin, T = x.shape
    O, _, K = w.shape
    out = np.zeros((B, O, T))
    for n in range(B):
        for o in range(O):
            for t in range(T):
                acc = float(b[o])
                for c in range(cin):
                    for k in range(K):
                        s = t + (k - K // 2) * dilation
                        if 0 <= s < T:
                            acc += float(w[o, c, k]) * float(x[n, c, s])
                out[n, o, t] = max(acc, 0.0)
    return out
