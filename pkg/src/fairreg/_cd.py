"""Numba kernels for weighted (block) coordinate descent.

Minimizes   sum_i w_i r_i^2 + b'Qb + c'b + sum_j pen_j |b_j|      (ridge: pen_j b_j^2)
with r = y - Xb.  Blocks are stored CSR-style in (blk_ptr, blk_idx); a block of
size one takes the scalar soft-threshold update, larger blocks are minimized
exactly by a primal-dual active-set iteration on the small lasso subproblem.

"Shared" blocks are the FAIR pattern: member 0 is a column over all rows and
member k is that same column restricted to the rows of group k. With rows
sorted by group (group k occupies rows gstart[k]:gstart[k+1]) such a block is
minimized exactly with one pass over its rows to collect per-group statistics
and one pass to update the residual.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True)
def _objective(r, w, beta, Qb, c, pen, ridge, has_q):
    n = r.shape[0]
    f = 0.0
    for i in range(n):
        f += w[i] * r[i] * r[i]
    for j in range(beta.shape[0]):
        if has_q:
            f += beta[j] * Qb[j] + c[j] * beta[j]
        if ridge:
            f += pen[j] * beta[j] * beta[j]
        else:
            f += pen[j] * abs(beta[j])
    return f


@njit(cache=True)
def _small_lasso_valid(H, g, lam, b, tol):
    s = b.shape[0]
    for j in range(s):
        d = g[j]
        for k in range(s):
            d -= H[j, k] * b[k]
        scale = tol * (1.0 + abs(g[j]) + lam[j])
        if b[j] > 0.0:
            if abs(d - lam[j]) > scale:
                return False
        elif b[j] < 0.0:
            if abs(d + lam[j]) > scale:
                return False
        elif abs(d) > lam[j] + scale:
            return False
    return True


@njit(cache=True)
def _solve_signed(H, g, lam, sign):
    s = g.shape[0]
    idx = np.empty(s, dtype=np.int64)
    na = 0
    for j in range(s):
        if sign[j] != 0:
            idx[na] = j
            na += 1
    b = np.zeros(s)
    if na == 0:
        return b
    A = np.empty((na, na))
    rhs = np.empty(na)
    for a in range(na):
        ja = idx[a]
        rhs[a] = g[ja] - lam[ja] * sign[ja]
        for q in range(na):
            A[a, q] = H[ja, idx[q]]
    sol = np.linalg.solve(A, rhs)
    for a in range(na):
        b[idx[a]] = sol[a]
    return b


@njit(cache=True)
def small_lasso(H, g, lam, b0):
    """argmin_b 0.5 b'Hb - g'b + sum_j lam_j |b_j| for small SPD ``H``."""
    s = g.shape[0]
    b = b0.copy()
    sign = np.zeros(s, dtype=np.int64)
    prev = np.zeros(s, dtype=np.int64)
    for it in range(60):
        for j in range(s):
            d = g[j]
            for k in range(s):
                d -= H[j, k] * b[k]
            t = b[j] + d / H[j, j]
            if t > lam[j] / H[j, j]:
                sign[j] = 1
            elif t < -lam[j] / H[j, j]:
                sign[j] = -1
            else:
                sign[j] = 0
        if it > 0:
            same = True
            for j in range(s):
                if sign[j] != prev[j]:
                    same = False
            if same:
                break
        b = _solve_signed(H, g, lam, sign)
        for j in range(s):
            prev[j] = sign[j]
    if _small_lasso_valid(H, g, lam, b, 1e-9):
        return b
    # exhaustive sign enumeration; only reached when the active-set iteration cycles
    best = b0.copy()
    best_f = np.inf
    total = 3 ** s
    for code in range(total):
        c = code
        for j in range(s):
            sign[j] = c % 3 - 1
            c //= 3
        cand = _solve_signed(H, g, lam, sign)
        ok = True
        for j in range(s):
            if sign[j] * cand[j] < 0.0:
                ok = False
        if not ok:
            continue
        f = 0.0
        for j in range(s):
            f += abs(cand[j]) * lam[j] - g[j] * cand[j]
            for k in range(s):
                f += 0.5 * cand[j] * H[j, k] * cand[k]
        if f < best_f:
            best_f = f
            best = cand
    return best


@njit(cache=True)
def _update_block(bi, X, w, r, beta, Qb, Q, c, pen, has_q, ridge, xw2, skip,
                  blk_ptr, blk_idx, gram_ptr, gram, rlo, rhi):
    lo = blk_ptr[bi]
    hi = blk_ptr[bi + 1]
    s = hi - lo
    if s == 1:
        j = blk_idx[lo]
        if skip[j]:
            return 0.0
        old = beta[j]
        a = xw2[j]
        if has_q:
            a += Q[j, j]
        if a <= 0.0:
            return 0.0
        dot = 0.0
        for i in range(rlo[j], rhi[j]):
            dot += w[i] * X[i, j] * r[i]
        h = dot + a * old
        if has_q:
            h -= Qb[j] + 0.5 * c[j]
        if ridge:
            new = h / (a + pen[j])
        else:
            new = soft(h, 0.5 * pen[j]) / a
        diff = new - old
        if diff != 0.0:
            beta[j] = new
            for i in range(rlo[j], rhi[j]):
                r[i] -= X[i, j] * diff
            if has_q:
                for k in range(Q.shape[0]):
                    Qb[k] += Q[k, j] * diff
        return abs(diff)

    H = np.empty((s, s))
    g = np.empty(s)
    lam = np.empty(s)
    old = np.empty(s)
    gp = gram_ptr[bi]
    for a in range(s):
        ja = blk_idx[lo + a]
        old[a] = beta[ja]
    for a in range(s):
        ja = blk_idx[lo + a]
        for q in range(s):
            jq = blk_idx[lo + q]
            v = gram[gp + a * s + q]
            if has_q:
                v += Q[ja, jq]
            H[a, q] = v
    for a in range(s):
        ja = blk_idx[lo + a]
        dot = 0.0
        for i in range(rlo[ja], rhi[ja]):
            dot += w[i] * X[i, ja] * r[i]
        h = dot
        for q in range(s):
            h += H[a, q] * old[q]
        if has_q:
            h -= Qb[ja] + 0.5 * c[ja]
        g[a] = 2.0 * h
        lam[a] = pen[ja]
    for a in range(s):
        for q in range(s):
            H[a, q] *= 2.0
    if ridge:
        for a in range(s):
            H[a, a] += 2.0 * lam[a]
        new = np.linalg.solve(H, g)
    else:
        new = small_lasso(H, g, lam, old)
    for a in range(s):
        if skip[blk_idx[lo + a]]:
            new[a] = 0.0
    chg = 0.0
    for a in range(s):
        ja = blk_idx[lo + a]
        diff = new[a] - old[a]
        if diff != 0.0:
            beta[ja] = new[a]
            for i in range(rlo[ja], rhi[ja]):
                r[i] -= X[i, ja] * diff
            if has_q:
                for k in range(Q.shape[0]):
                    Qb[k] += Q[k, ja] * diff
        if abs(diff) > chg:
            chg = abs(diff)
    return chg


@njit(cache=True)
def _pl_value(a, t, s, p, K):
    v = 2.0 * s[0] * (a - t[0])
    for k in range(1, K):
        if s[k] > 0.0:
            z = 2.0 * s[k] * (a - t[k])
            if z > p[k]:
                z = p[k]
            elif z < -p[k]:
                z = -p[k]
            v += z
    return v


@njit(cache=True)
def _pl_root(t, s, p, K, c, bp):
    """Root of G(a) + c, G(a) = 2 s0 (a - t0) + sum_k clip(2 s_k (a - t_k), -p_k, p_k).

    G is continuous, piecewise linear and strictly increasing (s0 > 0). ``bp`` is
    scratch space of length >= 2K.
    """
    nbp = 0
    for k in range(1, K):
        if s[k] > 0.0 and p[k] < np.inf:
            half = p[k] / (2.0 * s[k])
            bp[nbp] = t[k] - half
            bp[nbp + 1] = t[k] + half
            nbp += 2
    # insertion sort: a handful of breakpoints
    for q in range(1, nbp):
        v = bp[q]
        u = q - 1
        while u >= 0 and bp[u] > v:
            bp[u + 1] = bp[u]
            u -= 1
        bp[u + 1] = v
    lo = -np.inf
    hi = np.inf
    for q in range(nbp):
        if _pl_value(bp[q], t, s, p, K) + c >= 0.0:
            hi = bp[q]
            break
        lo = bp[q]
    if lo == -np.inf and hi == np.inf:
        ref = t[0]
    elif lo == -np.inf:
        ref = hi - 1.0
    elif hi == np.inf:
        ref = lo + 1.0
    else:
        ref = 0.5 * (lo + hi)
    slope = 2.0 * s[0]
    for k in range(1, K):
        if s[k] > 0.0 and abs(2.0 * s[k] * (ref - t[k])) < p[k]:
            slope += 2.0 * s[k]
    a = ref - (_pl_value(ref, t, s, p, K) + c) / slope
    # rounding must not push the root out of its linear segment
    if a < lo:
        a = lo
    if a > hi:
        a = hi
    return a


@njit(cache=True)
def _update_shared(bi, X, w, r, beta, pen, skip, blk_ptr, blk_idx, rlo, rhi, gstart, ss, work):
    """Exact minimization over a shared block; rows are sorted by group."""
    lo = blk_ptr[bi]
    K = blk_ptr[bi + 1] - lo
    j0 = blk_idx[lo]
    s = ss[bi]
    dot, t, p, d_old, delta, bp = work[0], work[1], work[2], work[3], work[4], work[5]
    for k in range(K):
        acc = 0.0
        for i in range(max(gstart[k], rlo[j0]), min(gstart[k + 1], rhi[j0])):
            acc += w[i] * X[i, j0] * r[i]
        dot[k] = acc
    a_old = beta[j0]
    t[0] = a_old + dot[0] / s[0]
    p[0] = pen[j0]
    for k in range(1, K):
        jk = blk_idx[lo + k]
        d_old[k] = beta[jk]
        p[k] = np.inf if skip[jk] else pen[jk]
        t[k] = a_old + d_old[k] + (dot[k] / s[k] if s[k] > 0.0 else 0.0)
    if skip[j0]:
        a = 0.0
    elif p[0] == 0.0:
        a = _pl_root(t, s, p, K, 0.0, bp)
    else:
        g0 = _pl_value(0.0, t, s, p, K)
        if g0 + p[0] < 0.0:
            a = _pl_root(t, s, p, K, p[0], bp)
        elif g0 - p[0] > 0.0:
            a = _pl_root(t, s, p, K, -p[0], bp)
        else:
            a = 0.0
    delta[0] = a - a_old
    chg = abs(delta[0])
    for k in range(1, K):
        if s[k] <= 0.0:
            d = d_old[k]
        elif p[k] == np.inf:
            d = 0.0
        else:
            d = soft(t[k] - a, p[k] / (2.0 * s[k]))
        diff = d - d_old[k]
        delta[k] = delta[0] + diff
        beta[blk_idx[lo + k]] = d
        if abs(diff) > chg:
            chg = abs(diff)
    beta[j0] = a
    if chg != 0.0:
        for k in range(K):
            dk = delta[k]
            if dk == 0.0:
                continue
            for i in range(max(gstart[k], rlo[j0]), min(gstart[k + 1], rhi[j0])):
                r[i] -= X[i, j0] * dk
    return chg


@njit(cache=True)
def detect_shared(X, blk_ptr, blk_idx, gstart):
    """True for blocks [j0, j1..j_{K-1}] where column j_k is j0 restricted to group k.

    Rows must be sorted by group, group ``k`` occupying ``gstart[k]:gstart[k+1]``.
    """
    nb = blk_ptr.shape[0] - 1
    n = X.shape[0]
    K = gstart.shape[0] - 1
    out = np.zeros(nb, dtype=np.bool_)
    if K < 2:
        return out
    for bi in range(nb):
        lo = blk_ptr[bi]
        if blk_ptr[bi + 1] - lo != K:
            continue
        j0 = blk_idx[lo]
        ok = True
        for k in range(1, K):
            jk = blk_idx[lo + k]
            a, b = gstart[k], gstart[k + 1]
            for i in range(n):
                if X[i, jk] != (X[i, j0] if a <= i < b else 0.0):
                    ok = False
                    break
            if not ok:
                break
        out[bi] = ok
    return out


@njit(cache=True)
def shared_stats(X, w, blk_ptr, blk_idx, rlo, rhi, gstart, shared):
    """Per-block, per-group weighted squared norms of each shared block's base column."""
    nb = blk_ptr.shape[0] - 1
    K = gstart.shape[0] - 1
    ss = np.zeros((nb, K))
    for bi in range(nb):
        if not shared[bi]:
            continue
        j0 = blk_idx[blk_ptr[bi]]
        for k in range(K):
            acc = 0.0
            for i in range(max(gstart[k], rlo[j0]), min(gstart[k + 1], rhi[j0])):
                acc += w[i] * X[i, j0] * X[i, j0]
            ss[bi, k] = acc
    return ss


@njit(cache=True)
def row_ranges(X):
    """First and one-past-last nonzero row of each column."""
    n, p = X.shape
    lo = np.zeros(p, dtype=np.int64)
    hi = np.zeros(p, dtype=np.int64)
    for j in range(p):
        a = 0
        while a < n and X[a, j] == 0.0:
            a += 1
        b = n
        while b > a and X[b - 1, j] == 0.0:
            b -= 1
        lo[j] = a
        hi[j] = b
    return lo, hi


@njit(cache=True)
def block_grams(X, w, blk_ptr, blk_idx, rlo, rhi, wanted):
    """Concatenated weighted Gram matrices of the wanted blocks larger than one."""
    nb = blk_ptr.shape[0] - 1
    gram_ptr = np.zeros(nb, dtype=np.int64)
    total = 0
    for bi in range(nb):
        s = blk_ptr[bi + 1] - blk_ptr[bi]
        gram_ptr[bi] = total
        if s > 1 and wanted[bi]:
            total += s * s
    gram = np.zeros(total)
    for bi in range(nb):
        lo = blk_ptr[bi]
        s = blk_ptr[bi + 1] - lo
        if s < 2 or not wanted[bi]:
            continue
        for a in range(s):
            ja = blk_idx[lo + a]
            for q in range(a, s):
                jq = blk_idx[lo + q]
                i0 = max(rlo[ja], rlo[jq])
                i1 = min(rhi[ja], rhi[jq])
                acc = 0.0
                for i in range(i0, i1):
                    acc += w[i] * X[i, ja] * X[i, jq]
                gram[gram_ptr[bi] + a * s + q] = acc
                gram[gram_ptr[bi] + q * s + a] = acc
    return gram_ptr, gram


@njit(cache=True)
def cd_loop(X, y, w, pen, Q, c, has_q, ridge, skip, blk_ptr, blk_idx,
            beta, tol, max_sweeps, use_active, trace, gstart, grouped):
    """Run sweeps in place on ``beta``; returns (sweeps, last_full_change).

    When ``grouped`` is set, rows are sorted by group with ``gstart`` marking the
    group boundaries, and blocks of the shared pattern get the exact update.
    """
    n, p = X.shape
    nb = blk_ptr.shape[0] - 1
    rlo, rhi = row_ranges(X)
    if grouped:
        shared = detect_shared(X, blk_ptr, blk_idx, gstart)
    else:
        shared = np.zeros(nb, dtype=np.bool_)
    ss = shared_stats(X, w, blk_ptr, blk_idx, rlo, rhi, gstart, shared)
    work = np.zeros((6, max(2 * (gstart.shape[0] - 1), 2)))
    generic = shared.copy()
    for bi in range(nb):
        if ss[bi, 0] <= 0.0:
            shared[bi] = False
        generic[bi] = not shared[bi]
    gram_ptr, gram = block_grams(X, w, blk_ptr, blk_idx, rlo, rhi, generic)
    xw2 = np.zeros(p)
    for j in range(p):
        acc = 0.0
        for i in range(rlo[j], rhi[j]):
            acc += w[i] * X[i, j] * X[i, j]
        xw2[j] = acc
    r = y.copy()
    for j in range(p):
        if beta[j] != 0.0:
            for i in range(n):
                r[i] -= X[i, j] * beta[j]
    Qb = np.zeros(p)
    if has_q:
        Qb = Q @ beta
    active = np.zeros(nb, dtype=np.bool_)
    sweeps = 0
    last_full = np.inf
    record = trace.shape[0] > 0
    while sweeps < max_sweeps:
        chg = 0.0
        for bi in range(nb):
            d = (_update_shared(bi, X, w, r, beta, pen, skip, blk_ptr, blk_idx, rlo, rhi,
                                 gstart, ss, work) if shared[bi] else
                 _update_block(bi, X, w, r, beta, Qb, Q, c, pen, has_q, ridge, xw2, skip,
                               blk_ptr, blk_idx, gram_ptr, gram, rlo, rhi))
            if d > chg:
                chg = d
        if record:
            trace[sweeps] = _objective(r, w, beta, Qb, c, pen, ridge, has_q)
        sweeps += 1
        last_full = chg
        if chg < tol:
            break
        if not use_active:
            continue
        na = 0
        for bi in range(nb):
            active[bi] = False
            for k in range(blk_ptr[bi], blk_ptr[bi + 1]):
                if beta[blk_idx[k]] != 0.0:
                    active[bi] = True
            if active[bi]:
                na += 1
        if na == nb:
            continue
        while sweeps < max_sweeps:
            chg = 0.0
            for bi in range(nb):
                if active[bi]:
                    d = (_update_shared(bi, X, w, r, beta, pen, skip, blk_ptr, blk_idx, rlo,
                                         rhi, gstart, ss, work) if shared[bi] else
                         _update_block(bi, X, w, r, beta, Qb, Q, c, pen, has_q, ridge, xw2,
                                       skip, blk_ptr, blk_idx, gram_ptr, gram, rlo, rhi))
                    if d > chg:
                        chg = d
            if record:
                trace[sweeps] = _objective(r, w, beta, Qb, c, pen, ridge, has_q)
            sweeps += 1
            if chg < tol:
                break
    return sweeps, last_full
