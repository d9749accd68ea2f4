"""Per-building events: EV urgency classification and elastic-resource bins.

An event summarizes the deferability of the building at one stage as the mean
of three ratios in [0, 1] (deferrable EV share, storage SOC, wind level),
discretized at width 0.1 into bins 0..9.
"""
from __future__ import annotations

import math

import numpy as np

from .dynamics import TIME_EPS

N_BINS = 10
# boundary values (e.g. mean exactly 0.6) land in the upper bin despite
# float rounding in the three-way average
BIN_EPS = 1e-9


def classify_evs(loc, trem, erem, k, *, dt, proc_rate):
    """(n_must, n_chargeable) for building k.

    Chargeable: parked at k with unmet demand and at least one stage left.
    Must-charge: chargeable and laxity trem - erem/proc_rate below one stage,
    i.e. deferring once would make the demand undeliverable.
    """
    n_m = 0
    n_c = 0
    for i in range(len(loc)):
        if loc[i] != k or erem[i] <= 0.0 or trem[i] < dt - TIME_EPS:
            continue
        n_c += 1
        if trem[i] - erem[i] / proc_rate < dt - TIME_EPS:
            n_m += 1
    return n_m, n_c


def elastic_ratios(n_m, n_c, soc, wind, *, n_bar, wind_cap):
    """(i_ev, i_hes, i_dre) in [0, 1]."""
    i_ev = (n_c - n_m) / n_bar
    i_hes = soc
    i_dre = min(wind / wind_cap, 1.0) if wind_cap > 0.0 else 0.0
    return i_ev, i_hes, i_dre


def event_of(n_m, n_c, soc, wind, *, n_bar, wind_cap):
    """(event value, bin index) for one building-stage."""
    i_ev, i_hes, i_dre = elastic_ratios(
        n_m, n_c, soc, wind, n_bar=n_bar, wind_cap=wind_cap
    )
    value = (i_ev + i_hes + i_dre) / 3.0
    b = int(math.floor(value * N_BINS + BIN_EPS))
    if b < 0:
        b = 0
    elif b > N_BINS - 1:
        b = N_BINS - 1
    return value, b
