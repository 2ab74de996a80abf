"""Compiled update kernels over the flat layout described in ``plan``.

Each ``*_step`` reads the previous iterate ``s`` and writes the next one into
``out``; none of them allocate.  ``drive`` is the shared fixed-point loop.
Status codes are returned instead of raising so that the Python side can
attach the iteration index and region to the error.
"""

import numpy as np
from numba import njit

FN, FN2, CP, BP_DLR, BP, MF, MF2, MF_GENERIC = range(8)

OK = 0
ERR_DEGENERATE = 1
ERR_LOG_ZERO = 2
ERR_NONFINITE = 3


@njit(cache=True)
def _expand(w, size, vec, off, ck):
    # w[:size] <- outer(w[:size], vec[off:off+ck]) flattened row-major, in place
    for idx in range(size - 1, -1, -1):
        base = w[idx]
        for x in range(ck - 1, -1, -1):
            w[idx * ck + x] = base * vec[off + x]
    return size * ck


@njit(cache=True)
def _product_weights(P, r, sing, w):
    size = 1
    w[0] = 1.0
    for q in range(P.reg_bptr[r], P.reg_bptr[r + 1]):
        k = P.reg_bnd[q]
        size = _expand(w, size, sing, P.node_off[k], P.card[k])
    return size


@njit(cache=True)
def _apply_conditional(P, r, bw, size, out, out_off, tmp):
    """out <- sum_c bw[c] * P(x_R | config c), normalized."""
    rs = P.reg_size[r]
    co = P.reg_coff[r]
    for x in range(rs):
        tmp[x] = 0.0
    for c in range(size):
        wc = bw[c]
        if wc != 0.0:
            base = co + c * rs
            for x in range(rs):
                tmp[x] += wc * P.cond[base + x]
    tot = 0.0
    for x in range(rs):
        tot += tmp[x]
    if not (tot > 0.0 and np.isfinite(tot)):
        return ERR_DEGENERATE
    for x in range(rs):
        out[out_off + x] = tmp[x] / tot
    return OK


@njit(cache=True)
def factorized_region(P, r, sing, out, out_off, w, tmp):
    """Region update with a product-of-singletons neighborhood distribution."""
    size = _product_weights(P, r, sing, w)
    return _apply_conditional(P, r, w, size, out, out_off, tmp)


@njit(cache=True)
def mf_region(P, i, sing, out, w, tmp):
    """Geometric-mean update: softmax of the expected log-conditional."""
    size = _product_weights(P, i, sing, w)
    rs = P.reg_size[i]
    co = P.reg_coff[i]
    for x in range(rs):
        tmp[x] = 0.0
    for c in range(size):
        wc = w[c]
        if wc == 0.0:
            continue
        base = co + c * rs
        for x in range(rs):
            lc = P.logcond[base + x]
            if lc == -np.inf:
                return ERR_LOG_ZERO
            tmp[x] += wc * lc
    m = tmp[0]
    for x in range(1, rs):
        if tmp[x] > m:
            m = tmp[x]
    tot = 0.0
    for x in range(rs):
        tmp[x] = np.exp(tmp[x] - m)
        tot += tmp[x]
    o = P.node_off[i]
    for x in range(rs):
        out[o + x] = tmp[x] / tot
    return OK


@njit(cache=True)
def _pair_entry(pairs, fo, risu, xr, xk, cr, ck):
    if risu == 1:
        return pairs[fo + xr * ck + xk]
    return pairs[fo + xk * cr + xr]


@njit(cache=True)
def bethe_region(P, r, base_tab, base_off, pairs, pair_base, sing, sing_mode, clamp,
                 out, out_off, w, bn, g, dk, tmp, counter):
    """Region update with a Bethe neighborhood distribution.

    B(x_R, x_N) = b_R(x_R) * prod_links b_rk(x_r, x_k) / D_r(x_r), with the
    divisor D taken from the singleton tables (``sing_mode == 0``) or from the
    x_r marginal of the link's own table (``sing_mode == 1``), so that every
    link contributes the conditional b(x_k | x_r).  A boundary node k linked
    to both ends of an edge region is further divided by D_k(x_k) once per
    extra link, which is the Bethe factorization of the region's star;
    ``sing_mode == 1`` uses the mean of the links' x_k marginals for D_k.
    Divisors below ``clamp`` are raised to it and counted.
    """
    rs = P.reg_size[r]
    r0 = P.reg_r0[r]
    r1 = P.reg_r1[r]
    c1 = P.card[r1] if r1 >= 0 else 1
    b0 = P.reg_bptr[r]
    nbnd = P.reg_bptr[r + 1] - b0
    nb = 1
    for p in range(nbnd):
        nb *= P.card[P.reg_bnd[b0 + p]]
    for c in range(nb):
        bn[c] = 0.0
    for s in range(rs):
        bval = base_tab[base_off + s]
        if bval == 0.0:
            continue
        xr0 = s // c1
        xr1 = s % c1
        size = 1
        w[0] = 1.0
        lq = P.reg_lptr[r]
        lend = P.reg_lptr[r + 1]
        for p in range(nbnd):
            k = P.reg_bnd[b0 + p]
            ck = P.card[k]
            for x in range(ck):
                g[x] = 1.0
                dk[x] = 0.0
            nlinks = 0
            while lq < lend and P.link_bpos[lq] == p:
                if P.link_r[lq] == 0:
                    rn = r0
                    xr = xr0
                else:
                    rn = r1
                    xr = xr1
                cr = P.card[rn]
                risu = P.link_risu[lq]
                fo = pair_base + P.edge_off[P.link_edge[lq]]
                if sing_mode == 0:
                    d = sing[P.node_off[rn] + xr]
                else:
                    d = 0.0
                    for x in range(ck):
                        d += _pair_entry(pairs, fo, risu, xr, x, cr, ck)
                if d < clamp:
                    d = clamp
                    counter[0] += 1
                for x in range(ck):
                    v = _pair_entry(pairs, fo, risu, xr, x, cr, ck)
                    g[x] *= v / d
                    if sing_mode == 1:
                        for y in range(cr):
                            dk[x] += _pair_entry(pairs, fo, risu, y, x, cr, ck)
                nlinks += 1
                lq += 1
            if nlinks > 1:
                for x in range(ck):
                    if sing_mode == 0:
                        d = sing[P.node_off[k] + x]
                    else:
                        d = dk[x] / nlinks
                    if d < clamp:
                        d = clamp
                        counter[0] += 1
                    for _ in range(nlinks - 1):
                        g[x] /= d
            size = _expand(w, size, g, 0, ck)
        for c in range(size):
            bn[c] += bval * w[c]
    return _apply_conditional(P, r, bn, nb, out, out_off, tmp)


@njit(cache=True)
def derived_singletons(P, pairs, pair_base, sd):
    """b_i = average over neighbors j of sum_{x_j} b_ij(x_i, x_j)."""
    for i in range(P.n):
        ci = P.card[i]
        o = P.node_off[i]
        for x in range(ci):
            sd[o + x] = 0.0
        deg = P.nbr_ptr[i + 1] - P.nbr_ptr[i]
        if deg == 0:
            tot = 0.0
            for x in range(ci):
                tot += P.unary[o + x]
            for x in range(ci):
                sd[o + x] = P.unary[o + x] / tot
            continue
        for p in range(P.nbr_ptr[i], P.nbr_ptr[i + 1]):
            ck = P.card[P.nbr[p]]
            fo = pair_base + P.edge_off[P.nbr_edge[p]]
            for x in range(ci):
                acc = 0.0
                for y in range(ck):
                    acc += _pair_entry(pairs, fo, P.nbr_isu[p], x, y, ci, ck)
                sd[o + x] += acc
        for x in range(ci):
            sd[o + x] /= deg


@njit(cache=True)
def _sigmoid(a):
    if a >= 0.0:
        return 1.0 / (1.0 + np.exp(-a))
    e = np.exp(a)
    return e / (1.0 + e)


@njit(cache=True)
def mf_ising_node(P, i, src, out):
    a = P.phi[i]
    for p in range(P.nbr_ptr[i], P.nbr_ptr[i + 1]):
        a += P.theta[P.nbr_edge[p]] * src[P.node_off[P.nbr[p]] + 1]
    p1 = _sigmoid(a)
    o = P.node_off[i]
    out[o] = 1.0 - p1
    out[o + 1] = p1


@njit(cache=True)
def mf2_step(P, s, out, H):
    for i in range(P.n):
        h = 0.0
        for p in range(P.nbr_ptr[i], P.nbr_ptr[i + 1]):
            h += P.theta[P.nbr_edge[p]] * s[P.node_off[P.nbr[p]] + 1]
        H[i] = h
    for i in range(P.n):
        bi = s[P.node_off[i] + 1]
        deg = P.nbr_ptr[i + 1] - P.nbr_ptr[i]
        if deg == 0:
            p1 = _sigmoid(P.phi[i])
        else:
            acc = 0.0
            for p in range(P.nbr_ptr[i], P.nbr_ptr[i + 1]):
                k = P.nbr[p]
                th = P.theta[P.nbr_edge[p]]
                bk = s[P.node_off[k] + 1]
                hi = H[i] - th * bk
                hk = H[k] - th * bi
                e10 = P.phi[i] + hi
                e01 = P.phi[k] + hk
                e11 = e10 + e01 + th
                m = max(0.0, e10, e01, e11)
                z00 = np.exp(-m)
                z10 = np.exp(e10 - m)
                z01 = np.exp(e01 - m)
                z11 = np.exp(e11 - m)
                acc += (z10 + z11) / (z00 + z10 + z01 + z11)
            p1 = acc / deg
        o = P.node_off[i]
        out[o] = 1.0 - p1
        out[o + 1] = p1


@njit(cache=True)
def bp_message_step(P, m, out, cav):
    for i in range(P.n):
        ci = P.card[i]
        uo = P.node_off[i]
        for p in range(P.nbr_ptr[i], P.nbr_ptr[i + 1]):
            for x in range(ci):
                cav[x] = P.unary[uo + x]
            for q in range(P.nbr_ptr[i], P.nbr_ptr[i + 1]):
                if q == p:
                    continue
                mo = P.msg_off[2 * P.nbr_edge[q] + P.nbr_isu[q]]
                for x in range(ci):
                    cav[x] *= m[mo + x]
            e = P.nbr_edge[p]
            ck = P.card[P.nbr[p]]
            isu = P.nbr_isu[p]
            oo = P.msg_off[2 * e + 1 - isu]
            fo = P.edge_off[e]
            tot = 0.0
            for y in range(ck):
                acc = 0.0
                for x in range(ci):
                    acc += _pair_entry(P.pair_pot, fo, isu, x, y, ci, ck) * cav[x]
                out[oo + y] = acc
                tot += acc
            if not (tot > 0.0 and np.isfinite(tot)):
                return ERR_DEGENERATE
            for y in range(ck):
                out[oo + y] /= tot
    return OK


@njit(cache=True)
def _cavity(P, i, skip_edge, m, cav):
    ci = P.card[i]
    uo = P.node_off[i]
    for x in range(ci):
        cav[x] = P.unary[uo + x]
    for q in range(P.nbr_ptr[i], P.nbr_ptr[i + 1]):
        if P.nbr_edge[q] == skip_edge:
            continue
        mo = P.msg_off[2 * P.nbr_edge[q] + P.nbr_isu[q]]
        for x in range(ci):
            cav[x] *= m[mo + x]


@njit(cache=True)
def beliefs_from_messages(P, m, b, cu, cv):
    """Level-2 belief vector (singletons then pairs) from a message vector."""
    for i in range(P.n):
        _cavity(P, i, -1, m, cu)
        o = P.node_off[i]
        tot = 0.0
        for x in range(P.card[i]):
            tot += cu[x]
        for x in range(P.card[i]):
            b[o + x] = cu[x] / tot
    ns = P.node_off[P.n]
    for e in range(P.E):
        u = P.edge_u[e]
        v = P.edge_v[e]
        _cavity(P, u, e, m, cu)
        _cavity(P, v, e, m, cv)
        fo = P.edge_off[e]
        cvv = P.card[v]
        tot = 0.0
        for x in range(P.card[u]):
            for y in range(cvv):
                val = P.pair_pot[fo + x * cvv + y] * cu[x] * cv[y]
                b[ns + fo + x * cvv + y] = val
                tot += val
        for t in range(P.card[u] * cvv):
            b[ns + fo + t] /= tot


@njit(cache=True)
def step(kind, P, s, out, sequential, clamp, w, bn, g, dk, tmp, sd, counter, err):
    """One application of the update map for algorithm ``kind``."""
    n = P.n
    ns = P.node_off[n]
    status = OK
    if kind == FN or kind == MF or kind == MF_GENERIC:
        if sequential:
            out[:] = s
            src = out
        else:
            src = s
        for i in range(n):
            if kind == FN:
                status = factorized_region(P, i, src, out, P.node_off[i], w, tmp)
            elif kind == MF and P.is_ising:
                mf_ising_node(P, i, src, out)
            else:
                status = mf_region(P, i, src, out, w, tmp)
            if status != OK:
                err[1] = i
                break
    elif kind == MF2:
        mf2_step(P, s, out, sd)
    elif kind == FN2:
        derived_singletons(P, s, 0, sd)
        for e in range(P.E):
            status = factorized_region(P, n + e, sd, out, P.edge_off[e], w, tmp)
            if status != OK:
                err[1] = n + e
                break
    elif kind == CP:
        for e in range(P.E):
            status = bethe_region(P, n + e, s, P.edge_off[e], s, 0, s, 1, clamp,
                                  out, P.edge_off[e], w, bn, g, dk, tmp, counter)
            if status != OK:
                err[1] = n + e
                break
    elif kind == BP_DLR:
        for i in range(n):
            status = bethe_region(P, i, s, P.node_off[i], s, ns, s, 0, clamp,
                                  out, P.node_off[i], w, bn, g, dk, tmp, counter)
            if status != OK:
                err[1] = i
                break
        if status == OK:
            for e in range(P.E):
                off = ns + P.edge_off[e]
                status = bethe_region(P, n + e, s, off, s, ns, s, 0, clamp,
                                      out, off, w, bn, g, dk, tmp, counter)
                if status != OK:
                    err[1] = n + e
                    break
    elif kind == BP:
        status = bp_message_step(P, s, out, g)
    err[0] = status
    return status


@njit(cache=True)
def observe(kind, P, s, obs, cu, cv):
    if kind == BP:
        beliefs_from_messages(P, s, obs, cu, cv)
    else:
        obs[:] = s


@njit(cache=True)
def _renormalize(v, tab_off):
    for t in range(tab_off.size - 1):
        tot = 0.0
        for q in range(tab_off[t], tab_off[t + 1]):
            tot += v[q]
        for q in range(tab_off[t], tab_off[t + 1]):
            v[q] /= tot


@njit(cache=True)
def weighted_kl(p, q, tab_off, alpha):
    total = 0.0
    for t in range(tab_off.size - 1):
        a = alpha[t]
        if a == 0.0:
            continue
        kl = 0.0
        for k in range(tab_off[t], tab_off[t + 1]):
            if p[k] > 0.0:
                if q[k] > 0.0:
                    kl += p[k] * np.log(p[k] / q[k])
                else:
                    kl = np.inf
        total += a * kl
    return total


@njit(cache=True)
def _max_abs_diff(a, b):
    r = 0.0
    for k in range(a.size):
        d = abs(a[k] - b[k])
        if d > r or d != d:
            r = d
    return r


@njit(cache=True)
def _same(a, b):
    for k in range(a.size):
        if a[k] != b[k]:
            return False
    return True


@njit(cache=True)
def scratch(P):
    w = np.empty(P.max_nb)
    bn = np.empty(P.max_nb)
    g = np.empty(max(P.max_card, 1))
    dk = np.empty(max(P.max_card, 1))
    tmp = np.empty(max(P.max_reg, 1))
    sd = np.empty(max(P.node_off[P.n], P.n))
    return w, bn, g, dk, tmp, sd


@njit(cache=True)
def single_step(kind, P, s, sequential, clamp):
    """Apply the update once; returns (out, status, region, clamp_count)."""
    w, bn, g, dk, tmp, sd = scratch(P)
    out = np.empty_like(s)
    counter = np.zeros(1, dtype=np.int64)
    err = np.zeros(2, dtype=np.int64)
    step(kind, P, s, out, sequential, clamp, w, bn, g, dk, tmp, sd, counter, err)
    return out, err[0], err[1], counter[0]


@njit(cache=True)
def drive(kind, P, state, obs_size, state_tabs, obs_tabs, alpha, tol, max_iter, damping,
          sequential, clamp, record_wskl, detect_cycles, window):
    """Iterate ``step`` until the observed tables move less than ``tol``.

    Once the state repeats exactly (Brent's cycle detection), the remaining
    trajectory is periodic; the loop then runs just enough further steps to
    land on the same phase as iteration ``max_iter`` and fills the traces by
    periodicity, which gives the same result as iterating to ``max_iter``.
    """
    w, bn, g, dk, tmp, sd = scratch(P)
    counter = np.zeros(1, dtype=np.int64)
    err = np.zeros(2, dtype=np.int64)
    cur = state.copy()
    raw = np.empty_like(cur)
    nxt = np.empty_like(cur)
    par = np.empty_like(cur)
    obs_cur = np.empty(obs_size)
    obs_nxt = np.empty(obs_size)
    obs_raw = np.empty(obs_size)
    observe(kind, P, cur, obs_cur, g, dk)
    trace = np.empty(max_iter)
    wtrace = np.empty(max_iter if record_wskl else 0)
    ring = np.empty((window, obs_size))
    ref = cur.copy()
    power = 1
    lam = 0
    period = 0
    detected_at = 0
    stop_at = max_iter
    it = 0
    converged = False
    status = OK
    while it < stop_at:
        status = step(kind, P, cur, raw, sequential, clamp, w, bn, g, dk, tmp, sd, counter, err)
        if status != OK:
            break
        it += 1
        if record_wskl:
            if sequential:
                step(kind, P, cur, par, False, clamp, w, bn, g, dk, tmp, sd, counter, err)
                observe(kind, P, par, obs_raw, g, dk)
            else:
                observe(kind, P, raw, obs_raw, g, dk)
            wtrace[it - 1] = weighted_kl(obs_cur, obs_raw, obs_tabs, alpha)
        if damping > 0.0:
            for k in range(cur.size):
                nxt[k] = (1.0 - damping) * raw[k] + damping * cur[k]
            _renormalize(nxt, state_tabs)
        else:
            nxt[:] = raw
        observe(kind, P, nxt, obs_nxt, g, dk)
        res = _max_abs_diff(obs_nxt, obs_cur)
        trace[it - 1] = res
        ring[(it - 1) % window, :] = obs_nxt
        cur, nxt = nxt, cur
        obs_cur, obs_nxt = obs_nxt, obs_cur
        if not np.isfinite(res):
            status = ERR_NONFINITE
            err[0] = status
            break
        if res < tol:
            converged = True
            break
        if detect_cycles and period == 0:
            lam += 1
            if _same(cur, ref):
                period = lam
                detected_at = it
                remaining = max_iter - it
                extra = remaining % period
                while extra < window + period and extra + period <= remaining:
                    extra += period
                stop_at = it + extra
            elif lam == power:
                ref[:] = cur
                power *= 2
                lam = 0
    iterations = it
    if status == OK and period > 0 and not converged:
        for t in range(stop_at, max_iter):
            trace[t] = trace[t - period]
            if record_wskl:
                wtrace[t] = wtrace[t - period]
        iterations = max_iter
    nt = min(it, window)
    tail = np.zeros(obs_size)
    for r in range(nt):
        tail += ring[(it - 1 - r) % window, :]
    if nt > 0:
        tail /= nt
    return (cur, obs_cur, iterations, converged, trace[:iterations],
            wtrace[:iterations] if record_wskl else wtrace, status, err[1],
            counter[0], period, detected_at, tail)
