"""Pure-numpy kernel implementations (fallback backend).

Mirrors _numba_backend exactly: same splitmix64 counter stream, same scan
order, same integer accumulations, so outputs are bit-identical.
"""

from __future__ import annotations

import math

import numpy as np

from ._rng import MASK64, value_at


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))


def grow_tree(X, y, row_idx, n_classes, k_features, min_leaf, max_depth, feat_seed):
    """Grow one CART tree over the rows listed in ``row_idx``.

    Split search is exhaustive over midpoints of sorted distinct values of
    each sampled feature; the best split minimizes the weighted child Gini
    (maximizes sum(count_c^2)/n_child summed over children). Ties keep the
    first candidate in scan order.

    Returns (feature, threshold, left, right, counts, n_nodes); feature[k] is
    -1 for leaves.
    """
    m = row_idx.shape[0]
    p = X.shape[1]
    cap = 2 * m + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    counts = np.zeros((cap, n_classes), dtype=np.int64)

    idx = np.array(row_idx, dtype=np.int64)
    draw = 0  # splitmix counter for feature sampling
    next_free = 1
    stack = [(0, 0, m, 0)]
    eye = np.eye(n_classes, dtype=np.int64)

    while stack:
        node, lo, hi, depth = stack.pop()
        rows = idx[lo:hi]
        labs = y[rows]
        node_counts = np.bincount(labs, minlength=n_classes).astype(np.int64)
        counts[node] = node_counts
        n_node = hi - lo
        pure = int((node_counts > 0).sum()) <= 1
        if pure or n_node < 2 * min_leaf or depth >= max_depth:
            continue

        feats = np.arange(p, dtype=np.int64)
        k = min(k_features, p)
        for i in range(k):
            j = i + int(value_at(feat_seed, draw) % ((p - i) & MASK64))
            draw += 1
            feats[i], feats[j] = feats[j], feats[i]

        best_score = -1.0
        best_feat = -1
        best_thr = 0.0
        for f in feats[:k]:
            vals = X[rows, f]
            order = np.argsort(vals, kind="stable")
            sv = vals[order]
            sl_counts = np.cumsum(eye[labs[order]], axis=0)  # (n_node, C)
            boundaries = np.nonzero(sv[1:] > sv[:-1])[0]  # split after position b
            if boundaries.size == 0:
                continue
            n_l = boundaries + 1
            n_r = n_node - n_l
            ok = (n_l >= min_leaf) & (n_r >= min_leaf)
            if not ok.any():
                continue
            boundaries = boundaries[ok]
            n_l = n_l[ok]
            n_r = n_r[ok]
            cl = sl_counts[boundaries]
            sl = (cl ** 2).sum(axis=1)
            cr = node_counts[None, :] - cl
            sr = (cr ** 2).sum(axis=1)
            score = sl / n_l + sr / n_r
            b = int(np.argmax(score))
            if score[b] > best_score:
                best_score = float(score[b])
                best_feat = int(f)
                a_val = float(sv[boundaries[b]])
                b_val = float(sv[boundaries[b] + 1])
                thr = a_val + 0.5 * (b_val - a_val)
                if thr >= b_val:
                    thr = a_val
                best_thr = thr
        if best_feat < 0:
            continue

        go_left = X[rows, best_feat] <= best_thr
        ordered = np.concatenate([rows[go_left], rows[~go_left]])
        idx[lo:hi] = ordered
        n_left = int(go_left.sum())

        feature[node] = best_feat
        threshold[node] = best_thr
        left_id = next_free
        right_id = next_free + 1
        next_free += 2
        left[node] = left_id
        right[node] = right_id
        stack.append((right_id, lo + n_left, hi, depth + 1))
        stack.append((left_id, lo, lo + n_left, depth + 1))

    return feature[:next_free], threshold[:next_free], left[:next_free], right[:next_free], counts[:next_free], next_free


def predict_votes(X, feature, threshold, left, right, leaf_class, tree_starts):
    """Per-class vote counts of a packed forest for every row of X."""
    n = X.shape[0]
    n_classes = int(leaf_class.max()) + 1 if leaf_class.size else 1
    votes = np.zeros((n, n_classes), dtype=np.int64)
    n_trees = tree_starts.shape[0] - 1
    row_ids = np.arange(n)
    for t in range(n_trees):
        node = np.full(n, tree_starts[t], dtype=np.int64)
        active = feature[node] >= 0
        while active.any():
            nz = np.nonzero(active)[0]
            nd = node[nz]
            go_left = X[nz, feature[nd]] <= threshold[nd]
            node[nz] = np.where(go_left, left[nd], right[nd])
            active[nz] = feature[node[nz]] >= 0
        votes[row_ids, leaf_class[node]] += 1
    return votes


def glmm_parts(X, y, starts, beta, v, gh_t, gh_logw):
    """Marginal log-likelihood and gradient of the random-intercept logit.

    Per group the integrand mode is found by damped Newton, the integral over
    the random intercept is evaluated by mode-centered Gauss-Hermite
    quadrature, and the gradient is the exact total derivative of that
    approximation (including the dependence of the centering and scaling on
    the parameters). Gradient layout: d/dbeta..., d/dv with v the intercept
    variance.
    """
    n, p = X.shape
    n_groups = starts.shape[0] - 1
    total = 0.0
    grad = np.zeros(p + 1)
    ln_norm = -0.5 * math.log(2.0 * math.pi * v)
    for g in range(n_groups):
        lo, hi = int(starts[g]), int(starts[g + 1])
        Xg = X[lo:hi]
        yg = y[lo:hi]
        xb = Xg @ beta

        u = 0.0
        for _ in range(100):
            pvec = _sigmoid(xb + u)
            gu = float(np.sum(yg - pvec)) - u / v
            hess = float(np.sum(pvec * (1.0 - pvec))) + 1.0 / v
            step = gu / hess
            step = min(5.0, max(-5.0, step))
            u += step
            if abs(step) < 1e-13 * (1.0 + abs(u)):
                break

        pm = _sigmoid(xb + u)
        w_m = pm * (1.0 - pm)
        H = float(np.sum(w_m)) + 1.0 / v
        s = math.sqrt(2.0 / H)
        uq = u + s * gh_t
        eta = xb[:, None] + uq[None, :]
        pq = _sigmoid(eta)
        g_uq = (yg[:, None] * eta - _softplus(eta)).sum(axis=0) - uq ** 2 / (2.0 * v) + ln_norm
        a = gh_logw + math.log(s) + g_uq
        amax = float(a.max())
        lse = amax + math.log(float(np.exp(a - amax).sum()))
        total += lse
        pi = np.exp(a - lse)

        Wx = Xg.T @ w_m
        w2_m = w_m * (1.0 - 2.0 * pm)
        W2 = float(np.sum(w2_m))
        W2x = Xg.T @ w2_m

        du_dbeta = -Wx / H
        du_dv = u / (v * v * H)
        dH_dbeta = W2 * du_dbeta + W2x
        dH_dv = W2 * du_dv - 1.0 / (v * v)

        resid = yg[:, None] - pq
        S0 = resid.sum(axis=0)
        Sx = Xg.T @ resid
        gu_q = S0 - uq / v

        coef = (uq - u) / (2.0 * H)
        dA_beta = (
            -dH_dbeta[:, None] / (2.0 * H)
            + Sx
            + gu_q[None, :] * (du_dbeta[:, None] - coef[None, :] * dH_dbeta[:, None])
        )
        dg_dv = uq ** 2 / (2.0 * v * v) - 1.0 / (2.0 * v)
        dA_v = -dH_dv / (2.0 * H) + dg_dv + gu_q * (du_dv - coef * dH_dv)

        grad[:p] += dA_beta @ pi
        grad[p] += float(dA_v @ pi)
    return total, grad
