"""Compiled iteration for the fused-lasso family.

Same fixed-point map as :mod:`ligme.solver`, written out for the specific
operator structure built by :func:`ligme.fused.build_model` (first
differences, cumulative sums, sliding windows, block sums) and for GME
matrices produced by the bivariate recipe, whose Gram matrices are scalar
multiples of ``P A^T A P`` and ``G^T P A^T A P G``.  One problem (one column
of ``y``) is solved per call; the whole loop runs inside numba.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# state layout (flat vector):
#   b (N) | d (K) | v1a (N-1) | v1b (N) | w1a (N-1) | w1b (N)
#   | v2a (N-1) | v2b (K) | w2a (N-1) | w2b (K) | z (m)


def state_layout(N, L):
    """Offsets of the blocks in the flat state vector."""
    K = L * (N - L)
    m = N - L
    sizes = [N, K, N - 1, N, N - 1, N, N - 1, K, N - 1, K, m]
    offs = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    return offs


@njit(cache=True, error_model="numpy", fastmath={"reassoc", "contract", "nsz", "arcp"})
def _G(d, N, L, out, s):
    # out = D^- S d : window sums then cumulative sum with zero first entry
    m = N - L
    s[:] = 0.0
    for j in range(m):
        base = j * L
        for t in range(L):
            s[j + t] += d[base + t]
    out[0] = 0.0
    acc = 0.0
    for k in range(N - 1):
        acc += s[k]
        out[k + 1] = acc


@njit(cache=True, error_model="numpy", fastmath={"reassoc", "contract", "nsz", "arcp"})
def _Gt(r, N, L, out, t):
    m = N - L
    acc = 0.0
    for j in range(N - 2, -1, -1):
        acc += r[j + 1]
        t[j] = acc
    for j in range(m):
        base = j * L
        for k in range(L):
            out[base + k] = t[j + k]


@njit(cache=True, error_model="numpy", fastmath={"reassoc", "contract", "nsz", "arcp"})
def _D(b, N, out):
    for k in range(N - 1):
        out[k] = b[k + 1] - b[k]


@njit(cache=True, error_model="numpy", fastmath={"reassoc", "contract", "nsz", "arcp"})
def _Dt(p, N, out):
    out[0] = -p[0]
    for k in range(1, N - 1):
        out[k] = p[k - 1] - p[k]
    out[N - 1] = p[N - 2]


@njit(cache=True, error_model="numpy", fastmath={"reassoc", "contract", "nsz", "arcp"})
def _center(q, out):
    n = q.shape[0]
    mean = 0.0
    for k in range(n):
        mean += q[k]
    mean /= n
    for k in range(n):
        out[k] = q[k] - mean


@njit(cache=True, error_model="numpy", fastmath={"reassoc", "contract", "nsz", "arcp"})
def _AtA(q, A, identity, out):
    if identity:
        out[:] = q
    else:
        out[:] = A.T @ (A @ q)


@njit(cache=True, error_model="numpy", fastmath={"reassoc", "contract", "nsz", "arcp"})
def _PAtAP(q, A, identity, out, tmp, tmp2):
    if identity:
        _center(q, out)
        return
    _center(q, tmp)
    _AtA(tmp, A, identity, tmp2)
    _center(tmp2, out)


@njit(cache=True, error_model="numpy", fastmath={"reassoc", "contract", "nsz", "arcp"})
def _soft(x, g):
    if x > g:
        return x - g
    if x < -g:
        return x + g
    return 0.0


@njit(cache=True, error_model="numpy", fastmath={"reassoc", "contract", "nsz", "arcp"})
def run(h, y, A, identity, N, L, mu, mu1, mu2, g1, g2, lo, hi,
        has_c2, c2_lower, c2_upper, sigma, tau, max_iter, rtol, stride, trace):
    """Iterate in place on the flat state ``h``.

    Returns ``(n_iter, residual, n_trace)``; rows of ``trace`` hold
    ``(iter, residual, early_violation, asym_residual)`` every ``stride``
    iterations and at the last one.
    """
    K = L * (N - L)
    m = N - L
    o_b = 0
    o_d = o_b + N
    o_v1a = o_d + K
    o_v1b = o_v1a + N - 1
    o_w1a = o_v1b + N
    o_w1b = o_w1a + N - 1
    o_v2a = o_w1b + N
    o_v2b = o_v2a + N - 1
    o_w2a = o_v2b + K
    o_w2b = o_w2a + N - 1
    o_z = o_w2b + K
    tot = o_z + m

    use1 = mu1 > 0.0
    use2 = mu2 > 0.0
    use_b1 = use1 and g1 > 0.0
    use_b2 = use2 and g2 > 0.0
    AtY = np.empty(N)
    if identity:
        AtY[:] = y
    else:
        AtY[:] = A.T @ y

    new = np.empty(tot)
    Db = np.empty(N - 1)
    Gd = np.empty(N)
    Gv2 = np.zeros(N)
    Dxi = np.empty(N - 1)
    Gxi = np.empty(N)
    xsum = np.empty(N)
    r = np.empty(N)
    grad_b = np.empty(N)
    grad_d = np.empty(K)
    gN = np.empty(N)
    tmpN = np.empty(N)
    dual_a = np.empty(N - 1)
    wa = np.empty(N - 1)
    wb = np.empty(N)
    wc = np.empty(N)

    _D(h[o_b:o_d], N, Db)
    _G(h[o_d:o_v1a], N, L, Gd, wa)
    if use_b2:
        _G(h[o_v2b:o_w2a], N, L, Gv2, wa)

    n_trace = 0
    res = np.inf
    k = 0
    while k < max_iter:
        b = h[o_b:o_d]
        d = h[o_d:o_v1a]
        # gradient-like term for xi.  G is linear, so every term that reaches d
        # through G^T is summed in gN first and mapped once.
        for i in range(N):
            xsum[i] = b[i] + Gd[i]
        if identity:
            for i in range(N):
                grad_b[i] = xsum[i] - AtY[i]
        else:
            grad_b[:] = A.T @ (A @ xsum) - AtY
        for i in range(N):
            gN[i] = grad_b[i]
        for i in range(N - 1):
            dual_a[i] = 0.0
        if use1:
            for i in range(N - 1):
                dual_a[i] += h[o_w1a + i]
            for i in range(N):
                gN[i] += mu * h[o_w1b + i]
            if use_b1:
                for i in range(N):
                    tmpN[i] = h[o_v1b + i] - Gd[i]
                _PAtAP(tmpN, A, identity, r, wb, wc)
                for i in range(N):
                    gN[i] += mu * mu1 * g1 * r[i]
        if use2:
            for i in range(N - 1):
                dual_a[i] += h[o_w2a + i]
            if use_b2:
                for i in range(N):
                    tmpN[i] = Gv2[i] - Gd[i]
                _PAtAP(tmpN, A, identity, r, wb, wc)
                for i in range(N):
                    gN[i] += mu * mu2 * g2 * r[i]
        if use1 or use2:
            _Dt(dual_a, N, tmpN)
            for i in range(N):
                grad_b[i] += mu * tmpN[i]
        _Gt(gN, N, L, grad_d, wa)
        if use2:
            for i in range(K):
                grad_d[i] += mu * h[o_w2b + i]
        if has_c2:
            for j in range(m):
                zj = mu * h[o_z + j]
                for t in range(L):
                    grad_d[j * L + t] += zj

        # xi = P_C0(x - grad / sigma); only b is constrained
        same = True
        for i in range(N):
            tmpN[i] = b[i] - grad_b[i] / sigma
        mean = 0.0
        for i in range(N):
            mean += tmpN[i]
            if tmpN[i] != tmpN[0]:
                same = False
        alpha = tmpN[0] if same else mean / N
        if alpha < lo:
            alpha = lo
        elif alpha > hi:
            alpha = hi
        for i in range(N):
            new[o_b + i] = alpha
        for i in range(K):
            new[o_d + i] = d[i] - grad_d[i] / sigma
        xi_b = new[o_b:o_d]
        xi_d = new[o_d:o_v1a]
        _D(xi_b, N, Dxi)
        _G(xi_d, N, L, Gxi, wa)

        if use1:
            step = mu * mu1 / tau
            for i in range(N - 1):
                new[o_v1a + i] = 0.0
                new[o_w1a + i] = 2.0 * Dxi[i] - Db[i] + h[o_w1a + i]
            if use_b1:
                for i in range(N):
                    tmpN[i] = 2.0 * Gxi[i] - Gd[i] - h[o_v1b + i]
                _PAtAP(tmpN, A, identity, r, wb, wc)
                for i in range(N):
                    new[o_v1b + i] = _soft(h[o_v1b + i] + step * g1 * r[i], step)
            else:
                for i in range(N):
                    new[o_v1b + i] = _soft(h[o_v1b + i], step)
            for i in range(N):
                rr = 2.0 * Gxi[i] - Gd[i] + h[o_w1b + i]
                new[o_w1b + i] = rr - _soft(rr, mu1)
        else:
            for i in range(o_v1a, o_v2a):
                new[i] = 0.0
        if use2:
            step = mu * mu2 / tau
            for i in range(N - 1):
                new[o_v2a + i] = 0.0
                new[o_w2a + i] = 2.0 * Dxi[i] - Db[i] + h[o_w2a + i]
            if use_b2:
                # G(2 xi_d - d - v2) from the cached images under G
                for i in range(N):
                    tmpN[i] = 2.0 * Gxi[i] - Gd[i] - Gv2[i]
                _PAtAP(tmpN, A, identity, r, wb, wc)
                _Gt(r, N, L, grad_d, wa)
                for i in range(K):
                    new[o_v2b + i] = _soft(h[o_v2b + i] + step * g2 * grad_d[i], step)
            else:
                for i in range(K):
                    new[o_v2b + i] = _soft(h[o_v2b + i], step)
            for i in range(K):
                rr = 2.0 * xi_d[i] - d[i] + h[o_w2b + i]
                new[o_w2b + i] = rr - _soft(rr, mu2)
        else:
            for i in range(o_v2a, o_z):
                new[i] = 0.0
        asym = 0.0
        if has_c2:
            for j in range(m):
                hx = 0.0
                hxi = 0.0
                for t in range(L):
                    hx += d[j * L + t]
                    hxi += xi_d[j * L + t]
                s = 2.0 * hxi - hx + h[o_z + j]
                p = s
                if p < c2_lower[j]:
                    p = c2_lower[j]
                elif p > c2_upper[j]:
                    p = c2_upper[j]
                new[o_z + j] = s - p
                # constraint residual of the new iterate
                q = hxi
                if q < c2_lower[j]:
                    q = c2_lower[j]
                elif q > c2_upper[j]:
                    q = c2_upper[j]
                asym += (hxi - q) ** 2
        else:
            for j in range(m):
                new[o_z + j] = 0.0

        num = 0.0
        den = 0.0
        for i in range(tot):
            diff = new[i] - h[i]
            num += diff * diff
            den += h[i] * h[i]
            h[i] = new[i]
        res = np.sqrt(num) / (1.0 + np.sqrt(den))
        Db[:] = Dxi
        Gd[:] = Gxi
        if use_b2:
            _G(h[o_v2b:o_w2a], N, L, Gv2, wa)
        k += 1
        if k % stride == 0 or res < rtol or k == max_iter:
            trace[n_trace, 0] = k
            trace[n_trace, 1] = res
            # b is written as one clamped constant, so it sits in C0 exactly
            viol = 0.0
            for i in range(N):
                if h[o_b + i] != h[o_b] or h[o_b] < lo or h[o_b] > hi:
                    viol = np.inf
            trace[n_trace, 2] = viol
            trace[n_trace, 3] = np.sqrt(asym)
            n_trace += 1
        if res < rtol:
            break
        if not np.isfinite(res):
            break
    return k, res, n_trace
