# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rollout kernel.

Mirrors _kernel_py.simulate_paths operation for operation: identical
expression order, identical tolerance guards, and an EV selection rule that
realizes the same total order (laxity asc, processing time desc, id asc).
The build disables FP contraction so results match the reference bit for bit.
"""
import numpy as np

from libc.math cimport floor

cdef double TIME_EPS = 1e-9
cdef double BIN_EPS = 1e-9
cdef int N_BINS = 10


cdef inline bint _before(double la, double pa, int ia,
                         double lb, double pb, int ib) nogil:
    # total order: laxity asc, processing time desc, id asc
    if la < lb:
        return True
    if la > lb:
        return False
    if pa > pb:
        return True
    if pa < pb:
        return False
    return ia < ib


cdef inline void _swap3(double* lax, double* proc, int* ids, int a, int b) nogil:
    cdef double td
    cdef int ti
    td = lax[a]; lax[a] = lax[b]; lax[b] = td
    td = proc[a]; proc[a] = proc[b]; proc[b] = td
    ti = ids[a]; ids[a] = ids[b]; ids[b] = ti


cdef void _select_smallest(double* lax, double* proc, int* ids, int n, int k) nogil:
    """Partition so positions [0, k) hold the k smallest in the total order."""
    cdef int lo = 0, hi = n - 1, mid, i, j, p
    while lo < hi:
        mid = lo + (hi - lo) // 2
        if _before(lax[mid], proc[mid], ids[mid], lax[lo], proc[lo], ids[lo]):
            _swap3(lax, proc, ids, lo, mid)
        if _before(lax[hi], proc[hi], ids[hi], lax[lo], proc[lo], ids[lo]):
            _swap3(lax, proc, ids, lo, hi)
        if _before(lax[hi], proc[hi], ids[hi], lax[mid], proc[mid], ids[mid]):
            _swap3(lax, proc, ids, mid, hi)
        _swap3(lax, proc, ids, mid, hi)  # median-of-three pivot to hi
        i = lo
        for j in range(lo, hi):
            if _before(lax[j], proc[j], ids[j], lax[hi], proc[hi], ids[hi]):
                _swap3(lax, proc, ids, i, j)
                i += 1
        _swap3(lax, proc, ids, i, hi)
        p = i
        if p == k - 1:
            return
        if p < k - 1:
            lo = p + 1
        else:
            hi = p - 1


def simulate_paths(
    int p_lo,
    int p_hi,
    double dt,
    double p_charge,
    double charge_step,
    double proc_rate,
    double eta_c,
    double eta_dc,
    double h_cap,
    double[::1] kappa,
    double[::1] nbar,
    double[::1] wind_cap,
    double[::1] prices,
    double[:, ::1] loads,
    double[:, :, ::1] wind,
    double[:, :, :, ::1] weights,
    double[::1] alpha,
    double[:, :, ::1] act_u,
    signed char[::1] loc0,
    double[::1] trem0,
    double[::1] erem0,
    double[::1] soc0,
    signed char[:, :, ::1] arr_loc,
    double[:, :, ::1] arr_tau,
    double[:, :, ::1] arr_eta,
    int[:, ::1] forced,
    double[:, :, ::1] out_cost,
    double[:, :, ::1] out_g,
    signed char[:, :, ::1] out_bins,
    signed char[:, :, ::1] out_act,
    int[:, :, ::1] out_nm,
    int[:, :, ::1] out_nc,
):
    cdef int tw = prices.shape[0]
    cdef int n_k = loads.shape[0]
    cdef int n_act = alpha.shape[0]
    cdef int n_ev = loc0.shape[0]
    cdef double lax_thr = dt - TIME_EPS
    cdef double dep_thr = dt + TIME_EPS

    scratch_loc = np.empty(n_ev, dtype=np.int8)
    scratch_trem = np.empty(n_ev, dtype=np.float64)
    scratch_erem = np.empty(n_ev, dtype=np.float64)
    scratch_soc = np.empty(n_k, dtype=np.float64)
    scratch_chg = np.zeros(n_ev, dtype=np.int8)
    scratch_ids = np.empty(n_ev, dtype=np.int32)
    scratch_lax = np.empty(n_ev, dtype=np.float64)
    scratch_proc = np.empty(n_ev, dtype=np.float64)
    cdef signed char[::1] loc = scratch_loc
    cdef double[::1] trem = scratch_trem
    cdef double[::1] erem = scratch_erem
    cdef double[::1] soc = scratch_soc
    cdef signed char[::1] charged = scratch_chg
    cdef int[::1] ids = scratch_ids
    cdef double[::1] lax = scratch_lax
    cdef double[::1] proc = scratch_proc

    cdef int p, w, k, i, j, m, n_m, n_c, count, b, kk
    cdef double r, cap, i_ev, i_hes, i_dre, value, s, thr, acc
    cdef double la, h_dc_max, h_c_max, d, h, g, cost, soc_next, x, p_ev, e_dec

    with nogil:
        for p in range(p_lo, p_hi):
            for i in range(n_ev):
                loc[i] = loc0[i]
                trem[i] = trem0[i]
                erem[i] = erem0[i]
            for kk in range(n_k):
                soc[kk] = soc0[kk]
            for w in range(tw):
                for i in range(n_ev):
                    charged[i] = 0
                for k in range(1, n_k + 1):
                    # classify chargeable / must-charge EVs parked at k
                    n_c = 0
                    n_m = 0
                    for i in range(n_ev):
                        if loc[i] != k or erem[i] <= 0.0 or trem[i] < lax_thr:
                            continue
                        ids[n_c] = i
                        proc[n_c] = erem[i] / proc_rate
                        la = trem[i] - erem[i] / proc_rate
                        lax[n_c] = la
                        if la < lax_thr:
                            n_m += 1
                        n_c += 1
                    r = wind[p, k - 1, w]
                    i_ev = (n_c - n_m) / nbar[k - 1]
                    i_hes = soc[k - 1]
                    cap = wind_cap[k - 1]
                    if cap > 0.0:
                        i_dre = r / cap
                        if i_dre > 1.0:
                            i_dre = 1.0
                    else:
                        i_dre = 0.0
                    value = (i_ev + i_hes + i_dre) / 3.0
                    b = <int>floor(value * N_BINS + BIN_EPS)
                    if b < 0:
                        b = 0
                    elif b > N_BINS - 1:
                        b = N_BINS - 1
                    if forced[w, k - 1] >= 0:
                        m = forced[w, k - 1]
                    else:
                        s = 0.0
                        for j in range(n_act):
                            s += weights[w, k - 1, b, j]
                        thr = act_u[p, w, k - 1] * s
                        acc = 0.0
                        m = n_act - 1
                        for j in range(n_act):
                            acc += weights[w, k - 1, b, j]
                            if acc > thr:
                                m = j
                                break
                    count = <int>floor(n_m + alpha[m] * (n_c - n_m) + 0.5)
                    if count >= n_c:
                        for j in range(n_c):
                            charged[ids[j]] = 1
                    elif count > 0:
                        _select_smallest(&lax[0], &proc[0], &ids[0], n_c, count)
                        for j in range(count):
                            charged[ids[j]] = 1
                    p_ev = count * p_charge
                    # building stage: mirror of dynamics.building_stage
                    x = soc[k - 1] * kappa[k - 1] * eta_dc / dt
                    h_dc_max = h_cap if h_cap < x else x
                    x = (1.0 - soc[k - 1]) * kappa[k - 1] / (eta_c * dt)
                    h_c_max = h_cap if h_cap < x else x
                    d = loads[k - 1, w] + p_ev - r
                    if d > 0.0:
                        h = d if d < h_dc_max else h_dc_max
                    elif d < 0.0:
                        h = -(-d) if -d < h_c_max else -h_c_max
                    else:
                        h = 0.0
                    g = d - h
                    cost = prices[w] * dt * g
                    if h >= 0.0:
                        soc_next = soc[k - 1] - h * dt / (eta_dc * kappa[k - 1])
                        if soc_next < 0.0:
                            soc_next = 0.0
                    else:
                        soc_next = soc[k - 1] - h * dt * eta_c / kappa[k - 1]
                        if soc_next > 1.0:
                            soc_next = 1.0
                    soc[k - 1] = soc_next
                    out_cost[p, w, k - 1] = cost
                    out_g[p, w, k - 1] = g
                    out_bins[p, w, k - 1] = <signed char>b
                    out_act[p, w, k - 1] = <signed char>m
                    out_nm[p, w, k - 1] = n_m
                    out_nc[p, w, k - 1] = n_c
                if w + 1 < tw:
                    for i in range(n_ev):
                        if loc[i] > 0:
                            if trem[i] <= dep_thr:
                                loc[i] = 0
                                trem[i] = 0.0
                                erem[i] = 0.0
                            else:
                                trem[i] = trem[i] - dt
                                if charged[i] != 0:
                                    e_dec = erem[i] - charge_step
                                    if e_dec < 0.0:
                                        e_dec = 0.0
                                    erem[i] = e_dec
                        if arr_loc[p, w + 1, i] > 0:
                            loc[i] = arr_loc[p, w + 1, i]
                            trem[i] = arr_tau[p, w + 1, i]
                            erem[i] = arr_eta[p, w + 1, i]
