"""Pure-python rollout kernel (reference implementation).

Simulates lookahead-window sample paths over pre-drawn randomness: wind
realizations, action uniforms, and dense future-arrival arrays.  The compiled
kernel in _speedups.pyx mirrors this stage loop operation for operation
(same expression order, same tolerance guards), so both backends produce
bit-identical outputs; the parity suite enforces that.

Path p only touches output rows p, so callers may split the path range
across workers.
"""
import numpy as np

from .dynamics import TIME_EPS, building_stage
from .events import BIN_EPS, N_BINS


def simulate_paths(
    p_lo,
    p_hi,
    dt,
    p_charge,
    charge_step,
    proc_rate,
    eta_c,
    eta_dc,
    h_cap,
    kappa,       # [K]
    nbar,        # [K] float
    wind_cap,    # [K]
    prices,      # [Tw]
    loads,       # [K, Tw]
    wind,        # [L, K, Tw]
    weights,     # [Tw, K, BINS, M]
    alpha,       # [M]
    act_u,       # [L, Tw, K]
    loc0,        # [N] int8
    trem0,       # [N]
    erem0,       # [N]
    soc0,        # [K]
    arr_loc,     # [L, Tw, N] int8
    arr_tau,     # [L, Tw, N]
    arr_eta,     # [L, Tw, N]
    forced,      # [Tw, K] int32, -1 to sample from the policy
    out_cost,    # [L, Tw, K]
    out_g,       # [L, Tw, K]
    out_bins,    # [L, Tw, K] int8
    out_act,     # [L, Tw, K] int8
    out_nm,      # [L, Tw, K] int32
    out_nc,      # [L, Tw, K] int32
):
    tw = prices.shape[0]
    n_k = loads.shape[0]
    n_m_act = alpha.shape[0]
    lax_thr = dt - TIME_EPS
    dep_thr = dt + TIME_EPS

    for p in range(p_lo, p_hi):
        loc = loc0.copy()
        trem = trem0.copy()
        erem = erem0.copy()
        soc = soc0.copy()
        for w in range(tw):
            charged = np.zeros(loc.shape[0], dtype=bool)
            for k in range(1, n_k + 1):
                member = (loc == k) & (erem > 0.0) & (trem >= lax_thr)
                idx = np.nonzero(member)[0]
                n_c = int(idx.size)
                lax = trem[idx] - erem[idx] / proc_rate
                n_m = int(np.count_nonzero(lax < lax_thr))
                r = wind[p, k - 1, w]
                i_ev = (n_c - n_m) / nbar[k - 1]
                i_hes = soc[k - 1]
                cap = wind_cap[k - 1]
                i_dre = min(r / cap, 1.0) if cap > 0.0 else 0.0
                value = (i_ev + i_hes + i_dre) / 3.0
                b = int(np.floor(value * N_BINS + BIN_EPS))
                if b < 0:
                    b = 0
                elif b > N_BINS - 1:
                    b = N_BINS - 1
                if forced[w, k - 1] >= 0:
                    m = int(forced[w, k - 1])
                else:
                    wv = weights[w, k - 1, b]
                    s = 0.0
                    for x in wv:
                        s += x
                    thr = act_u[p, w, k - 1] * s
                    acc = 0.0
                    m = n_m_act - 1
                    for j in range(n_m_act):
                        acc += wv[j]
                        if acc > thr:
                            m = j
                            break
                count = int(np.floor(n_m + alpha[m] * (n_c - n_m) + 0.5))
                if count >= n_c:
                    charged[idx] = True
                elif count > 0:
                    proc = erem[idx] / proc_rate
                    order = np.lexsort((idx, -proc, lax))
                    charged[idx[order[:count]]] = True
                p_ev = count * p_charge
                h, g, cost, soc_next = building_stage(
                    r,
                    loads[k - 1, w],
                    p_ev,
                    soc[k - 1],
                    prices[w],
                    kappa=kappa[k - 1],
                    eta_c=eta_c,
                    eta_dc=eta_dc,
                    h_cap=h_cap,
                    dt=dt,
                )
                soc[k - 1] = soc_next
                out_cost[p, w, k - 1] = cost
                out_g[p, w, k - 1] = g
                out_bins[p, w, k - 1] = b
                out_act[p, w, k - 1] = m
                out_nm[p, w, k - 1] = n_m
                out_nc[p, w, k - 1] = n_c
            if w + 1 < tw:
                parked = loc > 0
                departing = parked & (trem <= dep_thr)
                staying = parked & ~departing
                e_dec = np.where(charged, np.maximum(erem - charge_step, 0.0), erem)
                trem = np.where(staying, trem - dt, 0.0)
                erem = np.where(staying, e_dec, 0.0)
                loc = np.where(staying, loc, 0).astype(np.int8)
                al = arr_loc[p, w + 1]
                has = al > 0
                loc = np.where(has, al, loc).astype(np.int8)
                trem = np.where(has, arr_tau[p, w + 1], trem)
                erem = np.where(has, arr_eta[p, w + 1], erem)
