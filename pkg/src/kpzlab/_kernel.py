"""Event-driven simulation kernel (numba).

One compiled loop advances the chain event by event: exponential holding
times at the current total rate, bond selection by descent of a binary
prefix-sum tree over the L bond rates, swap, local rate refresh, and exact
accumulation of time integrals of the registered observables (piecewise
constant between events, so the integrals carry no quadrature error beyond
compensated float summation).

Observables come in two shapes:
  * local: sum_x weight(x) * table[pattern of eta around x], updated by
    re-evaluating the O(w) translates that see the swapped bond;
  * block: sum_j weight(j) * value[count of block j], where the ring is
    tiled by blocks of k sites; a swap changes at most two block counts.

Running sums are refreshed from scratch at every sample time, so float
drift from the incremental deltas never survives past a sample.

Status codes returned by run_kernel: 0 ok, 1 event budget exhausted,
2 event log capacity exhausted.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _bond_rate(eta, x, n2p, n2q, ctab, clo, cw):
    L = eta.shape[0]
    x1 = x + 1
    if x1 == L:
        x1 = 0
    e0 = eta[x]
    e1 = eta[x1]
    if e0 == e1:
        return 0.0
    pat = 0
    for b in range(cw):
        s = x + clo + b
        if s < 0:
            s += L
        elif s >= L:
            s -= L
        if eta[s]:
            pat |= 1 << b
    c = ctab[pat]
    if e0 == 1:
        return n2p * c
    return n2q * c


@njit(cache=True)
def _tree_rebuild(tree, P, eta, n2p, n2q, ctab, clo, cw):
    L = eta.shape[0]
    for i in range(P):
        if i < L:
            tree[P + i] = _bond_rate(eta, i, n2p, n2q, ctab, clo, cw)
        else:
            tree[P + i] = 0.0
    for k in range(P - 1, 0, -1):
        tree[k] = tree[2 * k] + tree[2 * k + 1]


@njit(cache=True)
def _tree_set(tree, P, i, v):
    k = P + i
    tree[k] = v
    k >>= 1
    while k >= 1:
        tree[k] = tree[2 * k] + tree[2 * k + 1]
        k >>= 1


@njit(cache=True)
def _tree_sample(tree, P, u):
    # u in [0, tree[1]); returns a leaf index by prefix descent
    k = 1
    while k < P:
        k <<= 1
        left = tree[k]
        if u >= left:
            u -= left
            k += 1
    return k - P


@njit(cache=True)
def _loc_partial(eta, tab, lo, w, wt, xlo, xhi):
    # sum of wt[x] * tab[pattern at x] for x in [xlo, xhi] (ring wrapped)
    L = eta.shape[0]
    acc = 0.0
    for x in range(xlo, xhi + 1):
        xm = x
        if xm < 0:
            xm += L
        elif xm >= L:
            xm -= L
        pat = 0
        for b in range(w):
            s = xm + lo + b
            if s < 0:
                s += L
            elif s >= L:
                s -= L
            if eta[s]:
                pat |= 1 << b
        acc += wt[xm] * tab[pat]
    return acc


@njit(cache=True)
def _refresh_sums(eta, n_loc, loc_tab, loc_lo, loc_w, loc_wt, loc_sum,
                  n_blk, blk_k, blk_cnt, blk_val, blk_wt, blk_sum):
    L = eta.shape[0]
    for i in range(n_loc):
        loc_sum[i] = _loc_partial(eta, loc_tab[i], loc_lo[i], loc_w[i],
                                  loc_wt[i], 0, L - 1)
    for j in range(n_blk):
        k = blk_k[j]
        nb = L // k
        s = 0.0
        for blk in range(nb):
            cnt = 0
            for y in range(blk * k, blk * k + k):
                cnt += eta[y]
            blk_cnt[j, blk] = cnt
            s += blk_wt[j, blk] * blk_val[j, cnt]
        blk_sum[j] = s


@njit(cache=True)
def run_kernel(eta, n2p, n2q, ctab, clo, cw,
               n_loc, loc_tab, loc_lo, loc_w, loc_wt,
               n_blk, blk_k, blk_val, blk_wt,
               sample_times, out_val, out_int,
               rec_eta, eta_snaps, rec_j, j_snaps,
               jumps_r, jumps_l,
               use_log, log_t, log_bond, log_dir,
               max_events, rng):
    L = eta.shape[0]
    P = 1
    while P < L:
        P <<= 1
    tree = np.zeros(2 * P)
    _tree_rebuild(tree, P, eta, n2p, n2q, ctab, clo, cw)

    max_nb = 1
    for j in range(n_blk):
        nb = L // blk_k[j]
        if nb > max_nb:
            max_nb = nb
    blk_cnt = np.zeros((max(n_blk, 1), max_nb), dtype=np.int64)
    loc_sum = np.zeros(max(n_loc, 1))
    blk_sum = np.zeros(max(n_blk, 1))
    _refresh_sums(eta, n_loc, loc_tab, loc_lo, loc_w, loc_wt, loc_sum,
                  n_blk, blk_k, blk_cnt, blk_val, blk_wt, blk_sum)

    loc_int = np.zeros(max(n_loc, 1))
    loc_cmp = np.zeros(max(n_loc, 1))
    blk_int = np.zeros(max(n_blk, 1))
    blk_cmp = np.zeros(max(n_blk, 1))

    # rate refresh range around a swapped bond b: bonds whose indicator or
    # whose c-window sees site b or b+1
    roff_lo = min(-1, -(clo + cw - 1))
    roff_hi = max(1, 1 - clo)

    nsamples = sample_times.shape[0]
    t = 0.0
    sidx = 0
    n_events = np.int64(0)
    rebuild_countdown = 4_000_000

    while sidx < nsamples:
        R = tree[1]
        if R <= 0.0:
            te = np.inf
        else:
            te = t + rng.standard_exponential() / R

        # consume sample times up to the next event
        while sidx < nsamples and sample_times[sidx] <= te:
            ts = sample_times[sidx]
            dt = ts - t
            if dt > 0.0:
                for i in range(n_loc):
                    y = loc_sum[i] * dt - loc_cmp[i]
                    tt = loc_int[i] + y
                    loc_cmp[i] = (tt - loc_int[i]) - y
                    loc_int[i] = tt
                for j in range(n_blk):
                    y = blk_sum[j] * dt - blk_cmp[j]
                    tt = blk_int[j] + y
                    blk_cmp[j] = (tt - blk_int[j]) - y
                    blk_int[j] = tt
                t = ts
            _refresh_sums(eta, n_loc, loc_tab, loc_lo, loc_w, loc_wt, loc_sum,
                          n_blk, blk_k, blk_cnt, blk_val, blk_wt, blk_sum)
            for i in range(n_loc):
                out_val[sidx, i] = loc_sum[i]
                out_int[sidx, i] = loc_int[i]
            for j in range(n_blk):
                out_val[sidx, n_loc + j] = blk_sum[j]
                out_int[sidx, n_loc + j] = blk_int[j]
            if rec_eta:
                for x in range(L):
                    eta_snaps[sidx, x] = eta[x]
            if rec_j:
                for x in range(L):
                    j_snaps[sidx, x] = np.int64(jumps_r[x]) - np.int64(jumps_l[x])
            sidx += 1
        if sidx >= nsamples:
            break

        if n_events >= max_events:
            audit = audit_rates(eta, n2p, n2q, ctab, clo, cw, tree[P:P + L])
            return 1, n_events, t, audit

        # integrate up to the event and apply it
        dt = te - t
        for i in range(n_loc):
            y = loc_sum[i] * dt - loc_cmp[i]
            tt = loc_int[i] + y
            loc_cmp[i] = (tt - loc_int[i]) - y
            loc_int[i] = tt
        for j in range(n_blk):
            y = blk_sum[j] * dt - blk_cmp[j]
            tt = blk_int[j] + y
            blk_cmp[j] = (tt - blk_int[j]) - y
            blk_int[j] = tt
        t = te

        u = rng.random() * R
        b = _tree_sample(tree, P, u)
        if b >= L or tree[P + b] <= 0.0:
            # stale prefix sums; rebuild and redraw once
            _tree_rebuild(tree, P, eta, n2p, n2q, ctab, clo, cw)
            u = rng.random() * tree[1]
            b = _tree_sample(tree, P, u)
            if b >= L or tree[P + b] <= 0.0:
                best = 0
                for i in range(L):
                    if tree[P + i] > tree[P + best]:
                        best = i
                b = best

        b1 = b + 1
        if b1 == L:
            b1 = 0
        moved_right = eta[b] == 1

        # local observable deltas: subtract old contributions, swap, add new
        for i in range(n_loc):
            xlo = b - (loc_lo[i] + loc_w[i] - 1)
            xhi = b + 1 - loc_lo[i]
            loc_sum[i] -= _loc_partial(eta, loc_tab[i], loc_lo[i], loc_w[i],
                                       loc_wt[i], xlo, xhi)

        if moved_right:
            eta[b] = 0
            eta[b1] = 1
            jumps_r[b] += 1
        else:
            eta[b] = 1
            eta[b1] = 0
            jumps_l[b] += 1

        for i in range(n_loc):
            xlo = b - (loc_lo[i] + loc_w[i] - 1)
            xhi = b + 1 - loc_lo[i]
            loc_sum[i] += _loc_partial(eta, loc_tab[i], loc_lo[i], loc_w[i],
                                       loc_wt[i], xlo, xhi)

        # block counts: the donor and receiver sites may sit in different blocks
        if n_blk > 0:
            if moved_right:
                sfrom, sto = b, b1
            else:
                sfrom, sto = b1, b
            for j in range(n_blk):
                k = blk_k[j]
                ba = sfrom // k
                bb = sto // k
                if ba != bb:
                    ca = blk_cnt[j, ba]
                    cb = blk_cnt[j, bb]
                    blk_sum[j] += (blk_wt[j, ba] * (blk_val[j, ca - 1] - blk_val[j, ca])
                                   + blk_wt[j, bb] * (blk_val[j, cb + 1] - blk_val[j, cb]))
                    blk_cnt[j, ba] = ca - 1
                    blk_cnt[j, bb] = cb + 1

        # refresh the rates that see the swapped sites
        for off in range(roff_lo, roff_hi + 1):
            y = b + off
            if y < 0:
                y += L
            elif y >= L:
                y -= L
            _tree_set(tree, P, y, _bond_rate(eta, y, n2p, n2q, ctab, clo, cw))

        if use_log:
            if n_events >= log_t.shape[0]:
                audit = audit_rates(eta, n2p, n2q, ctab, clo, cw, tree[P:P + L])
                return 2, n_events, t, audit
            log_t[n_events] = t
            log_bond[n_events] = b
            log_dir[n_events] = 1 if moved_right else 0

        n_events += 1
        rebuild_countdown -= 1
        if rebuild_countdown == 0:
            _tree_rebuild(tree, P, eta, n2p, n2q, ctab, clo, cw)
            rebuild_countdown = 4_000_000

    audit = audit_rates(eta, n2p, n2q, ctab, clo, cw, tree[P:P + L])
    return 0, n_events, t, audit


@njit(cache=True)
def audit_rates(eta, n2p, n2q, ctab, clo, cw, leaves):
    """Max abs difference between supplied leaf rates and a fresh rebuild."""
    L = eta.shape[0]
    worst = 0.0
    for x in range(L):
        d = abs(leaves[x] - _bond_rate(eta, x, n2p, n2q, ctab, clo, cw))
        if d > worst:
            worst = d
    return worst
