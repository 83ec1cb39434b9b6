"""Numba ``@njit`` kernel implementations (default backend).

Same algorithms as _numpy_backend. Tree kernels accumulate class counts as
integers, so their outputs match the numpy backend bit for bit; glmm_parts
matches up to float reassociation (~1e-12 relative).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_U = np.uint64
_GOLDEN = _U(0x9E3779B97F4A7C15)
_MIX1 = _U(0xBF58476D1CE4E5B9)
_MIX2 = _U(0x94D049BB133111EB)


@njit(cache=True, nogil=True, inline="always")
def _value_at(seed, k):
    z = _U(seed) + (_U(k) + _U(1)) * _GOLDEN
    z = (z ^ (z >> _U(30))) * _MIX1
    z = (z ^ (z >> _U(27))) * _MIX2
    return z ^ (z >> _U(31))


@njit(cache=True, nogil=True)
def grow_tree(X, y, row_idx, n_classes, k_features, min_leaf, max_depth, feat_seed):
    m = row_idx.shape[0]
    p = X.shape[1]
    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    counts = np.zeros((cap, n_classes), dtype=np.int64)

    idx = row_idx.copy()
    tmp = np.empty(m, dtype=np.int64)
    vals = np.empty(m, dtype=np.float64)
    labs = np.empty(m, dtype=np.int64)
    cl = np.empty(n_classes, dtype=np.int64)
    cr = np.empty(n_classes, dtype=np.int64)
    feats = np.empty(p, dtype=np.int64)

    stack_node = np.empty(cap, dtype=np.int64)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = m
    stack_depth[0] = 0
    top = 1

    draw = 0
    next_free = 1
    k = min(k_features, p)

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        depth = stack_depth[top]
        n_node = hi - lo

        for c in range(n_classes):
            cl[c] = 0
        for r in range(n_node):
            lab = y[idx[lo + r]]
            labs[r] = lab
            cl[lab] += 1
        nonzero = 0
        total_sq = 0
        for c in range(n_classes):
            counts[node, c] = cl[c]
            if cl[c] > 0:
                nonzero += 1
            total_sq += cl[c] * cl[c]
        if nonzero <= 1 or n_node < 2 * min_leaf or depth >= max_depth:
            continue

        for i in range(p):
            feats[i] = i
        for i in range(k):
            j = i + np.int64(_value_at(feat_seed, draw) % _U(p - i))
            draw += 1
            t = feats[i]
            feats[i] = feats[j]
            feats[j] = t

        best_score = -1.0
        best_feat = -1
        best_thr = 0.0
        for fi in range(k):
            f = feats[fi]
            for r in range(n_node):
                vals[r] = X[idx[lo + r], f]
            order = np.argsort(vals[:n_node])
            for c in range(n_classes):
                cl[c] = 0
                cr[c] = counts[node, c]
            sl = 0
            sr = total_sq
            feat_best = -1.0
            feat_pos = -1
            for b in range(n_node - 1):
                lab = labs[order[b]]
                sl += 2 * cl[lab] + 1
                cl[lab] += 1
                sr -= 2 * cr[lab] - 1
                cr[lab] -= 1
                if vals[order[b + 1]] <= vals[order[b]]:
                    continue
                n_l = b + 1
                n_r = n_node - n_l
                if n_l < min_leaf or n_r < min_leaf:
                    continue
                score = sl / n_l + sr / n_r
                if score > feat_best:
                    feat_best = score
                    feat_pos = b
            if feat_pos >= 0 and feat_best > best_score:
                best_score = feat_best
                best_feat = f
                a_val = vals[order[feat_pos]]
                b_val = vals[order[feat_pos + 1]]
                thr = a_val + 0.5 * (b_val - a_val)
                if thr >= b_val:
                    thr = a_val
                best_thr = thr
        if best_feat < 0:
            continue

        n_left = 0
        n_right = 0
        for r in range(lo, hi):
            if X[idx[r], best_feat] <= best_thr:
                tmp[n_left] = idx[r]
                n_left += 1
        for r in range(lo, hi):
            if not (X[idx[r], best_feat] <= best_thr):
                tmp[n_left + n_right] = idx[r]
                n_right += 1
        for r in range(n_node):
            idx[lo + r] = tmp[r]

        feature[node] = best_feat
        threshold[node] = best_thr
        left_id = next_free
        right_id = next_free + 1
        next_free += 2
        left[node] = left_id
        right[node] = right_id
        stack_node[top] = right_id
        stack_lo[top] = lo + n_left
        stack_hi[top] = hi
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = left_id
        stack_lo[top] = lo
        stack_hi[top] = lo + n_left
        stack_depth[top] = depth + 1
        top += 1

    return (
        feature[:next_free],
        threshold[:next_free],
        left[:next_free],
        right[:next_free],
        counts[:next_free],
        next_free,
    )


@njit(cache=True, nogil=True)
def predict_votes(X, feature, threshold, left, right, leaf_class, tree_starts):
    n = X.shape[0]
    n_classes = 1
    for i in range(leaf_class.shape[0]):
        if leaf_class[i] + 1 > n_classes:
            n_classes = leaf_class[i] + 1
    votes = np.zeros((n, n_classes), dtype=np.int64)
    n_trees = tree_starts.shape[0] - 1
    for t in range(n_trees):
        root = tree_starts[t]
        for i in range(n):
            node = root
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            votes[i, leaf_class[node]] += 1
    return votes


@njit(cache=True, nogil=True, inline="always")
def _sigmoid1(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


@njit(cache=True, nogil=True, inline="always")
def _softplus1(x):
    if x > 30.0:
        return x
    return math.log1p(math.exp(x))


@njit(cache=True, nogil=True)
def glmm_parts(X, y, starts, beta, v, gh_t, gh_logw):
    n, p = X.shape
    n_groups = starts.shape[0] - 1
    n_quad = gh_t.shape[0]
    total = 0.0
    grad = np.zeros(p + 1)
    ln_norm = -0.5 * math.log(2.0 * math.pi * v)

    a = np.empty(n_quad)
    pi = np.empty(n_quad)
    uq = np.empty(n_quad)
    s0 = np.empty(n_quad)
    sx = np.empty((p, n_quad))

    for g in range(n_groups):
        lo = starts[g]
        hi = starts[g + 1]
        ng = hi - lo
        xb = np.empty(ng)
        for j in range(ng):
            acc = 0.0
            for c in range(p):
                acc += X[lo + j, c] * beta[c]
            xb[j] = acc

        u = 0.0
        for _ in range(100):
            gu = -u / v
            hess = 1.0 / v
            for j in range(ng):
                pj = _sigmoid1(xb[j] + u)
                gu += y[lo + j] - pj
                hess += pj * (1.0 - pj)
            step = gu / hess
            if step > 5.0:
                step = 5.0
            elif step < -5.0:
                step = -5.0
            u += step
            if abs(step) < 1e-13 * (1.0 + abs(u)):
                break

        W = 0.0
        W2 = 0.0
        Wx = np.zeros(p)
        W2x = np.zeros(p)
        for j in range(ng):
            pj = _sigmoid1(xb[j] + u)
            wj = pj * (1.0 - pj)
            w2j = wj * (1.0 - 2.0 * pj)
            W += wj
            W2 += w2j
            for c in range(p):
                W2x[c] += w2j * X[lo + j, c]
                Wx[c] += wj * X[lo + j, c]
        H = W + 1.0 / v
        s = math.sqrt(2.0 / H)

        for q in range(n_quad):
            uq[q] = u + s * gh_t[q]
            ll = 0.0
            s0q = 0.0
            for c in range(p):
                sx[c, q] = 0.0
            for j in range(ng):
                eta = xb[j] + uq[q]
                yj = y[lo + j]
                ll += yj * eta - _softplus1(eta)
                resid = yj - _sigmoid1(eta)
                s0q += resid
                for c in range(p):
                    sx[c, q] += resid * X[lo + j, c]
            s0[q] = s0q
            a[q] = gh_logw[q] + math.log(s) + ll - uq[q] * uq[q] / (2.0 * v) + ln_norm

        amax = a[0]
        for q in range(1, n_quad):
            if a[q] > amax:
                amax = a[q]
        acc = 0.0
        for q in range(n_quad):
            acc += math.exp(a[q] - amax)
        lse = amax + math.log(acc)
        total += lse
        for q in range(n_quad):
            pi[q] = math.exp(a[q] - lse)

        du_dv = u / (v * v * H)
        dH_dv = W2 * du_dv - 1.0 / (v * v)
        for q in range(n_quad):
            gu_q = s0[q] - uq[q] / v
            coef = (uq[q] - u) / (2.0 * H)
            dg_dv = uq[q] * uq[q] / (2.0 * v * v) - 1.0 / (2.0 * v)
            dA_v = -dH_dv / (2.0 * H) + dg_dv + gu_q * (du_dv - coef * dH_dv)
            grad[p] += pi[q] * dA_v
            for c in range(p):
                du_db = -Wx[c] / H
                dH_db = W2 * du_db + W2x[c]
                dA_b = -dH_db / (2.0 * H) + sx[c, q] + gu_q * (du_db - coef * dH_db)
                grad[c] += pi[q] * dA_b
    return total, grad
