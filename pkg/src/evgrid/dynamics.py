"""Single-stage physical dynamics: EV batteries, building storage, exchange.

All quantities are bus-side kW / kWh; stage length `dt` is in hours.  The
storage dispatch is a fixed rule (absorb surplus, cover deficit), so the grid
exchange and the stage cost are closed-form in the net building balance
d = load + charging - wind.  The same shared-subexpression forms are mirrored
by the compiled kernel so both backends produce identical floats.

Numeric guards: remaining parking times are exact multiples of dt, but a
1e-9 tolerance is applied to departure and laxity comparisons so that
boundary states are classified consistently.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import ROAD, MicrogridConfig

TIME_EPS = 1e-9


def ev_step(t_rem, e_rem, loc, charged, arrival, *, dt, charge_step):
    """Advance one EV by one stage.

    arrival: None, or (building, tau_h, eta_kwh) when the EV parks at the
    next stage.  Returns the next (t_rem, e_rem, loc).
    """
    if arrival is not None:
        b, tau, eta = arrival
        return float(tau), float(eta), int(b)
    if loc == ROAD:
        return 0.0, 0.0, ROAD
    if t_rem <= dt + TIME_EPS:  # parking time exhausted: departs
        return 0.0, 0.0, ROAD
    e_next = e_rem
    if charged:
        e_next = e_rem - charge_step
        if e_next < 0.0:
            e_next = 0.0
    return t_rem - dt, e_next, int(loc)


def hes_bounds(soc, *, kappa, eta_c, eta_dc, h_cap, dt):
    """(max discharge kW, max charge kW) available for one stage."""
    h_dc_max = min(h_cap, soc * kappa * eta_dc / dt)
    h_c_max = min(h_cap, (1.0 - soc) * kappa / (eta_c * dt))
    return h_dc_max, h_c_max


def hes_dispatch(wind, load, p_ev, soc, *, kappa, eta_c, eta_dc, h_cap, dt):
    """Storage power h (kW): positive discharging, negative charging."""
    h_dc_max, h_c_max = hes_bounds(
        soc, kappa=kappa, eta_c=eta_c, eta_dc=eta_dc, h_cap=h_cap, dt=dt
    )
    d = load + p_ev - wind
    if d > 0.0:
        return min(d, h_dc_max)
    if d < 0.0:
        return -min(-d, h_c_max)
    return 0.0


def hes_step(soc, h, *, kappa, eta_c, eta_dc, dt):
    """Next state of charge after one stage at storage power h."""
    if h >= 0.0:
        nxt = soc - h * dt / (eta_dc * kappa)
        return nxt if nxt > 0.0 else 0.0
    nxt = soc - h * dt * eta_c / kappa
    return nxt if nxt < 1.0 else 1.0


def exchange_power(wind, load, p_ev, h):
    """Grid exchange g (kW): positive import, negative export."""
    return load + p_ev - wind - h


def one_step_cost(wind, load, p_ev, soc, price, *, kappa, eta_c, eta_dc, h_cap, dt):
    """Stage energy cost (RMB): import billed, export credited, else zero."""
    h_dc_max, h_c_max = hes_bounds(
        soc, kappa=kappa, eta_c=eta_c, eta_dc=eta_dc, h_cap=h_cap, dt=dt
    )
    d = load + p_ev - wind
    if d <= -h_c_max:  # surplus beyond what storage absorbs: export
        return price * dt * (d + h_c_max)
    if d >= h_dc_max:  # deficit beyond what storage covers: import
        return price * dt * (d - h_dc_max)
    return 0.0


def building_stage(wind, load, p_ev, soc, price, *, kappa, eta_c, eta_dc, h_cap, dt):
    """One building-stage: returns (h, g, cost, next soc).

    Canonical evaluation order shared with the compiled kernel; cost here is
    exactly price*dt*g by construction.
    """
    h_dc_max, h_c_max = hes_bounds(
        soc, kappa=kappa, eta_c=eta_c, eta_dc=eta_dc, h_cap=h_cap, dt=dt
    )
    d = load + p_ev - wind
    if d > 0.0:
        h = d if d < h_dc_max else h_dc_max
    elif d < 0.0:
        h = -(-d) if -d < h_c_max else -h_c_max
    else:
        h = 0.0
    g = d - h
    cost = price * dt * g
    if h >= 0.0:
        soc_next = soc - h * dt / (eta_dc * kappa)
        if soc_next < 0.0:
            soc_next = 0.0
    else:
        soc_next = soc - h * dt * eta_c / kappa
        if soc_next > 1.0:
            soc_next = 1.0
    return h, g, cost, soc_next


@dataclass
class Violation:
    code: str
    building: int  # 0 for grid-level
    detail: str


@dataclass
class FeasibilityReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_feasibility(cfg: MicrogridConfig, wind, load, p_ev, h, loc, trem, erem) -> FeasibilityReport:
    """Check one stage against the transmission, storage, EV and balance laws."""
    rep = FeasibilityReport()
    g = np.empty(cfg.n_buildings)
    for k in range(cfg.n_buildings):
        g[k] = exchange_power(wind[k], load[k], p_ev[k], h[k])
        bal = wind[k] + h[k] + g[k] - load[k] - p_ev[k]
        if abs(bal) > 1e-9:
            rep.violations.append(
                Violation("balance", k + 1, f"residual {bal:.3e} kW")
            )
    total = float(g.sum())
    if total > cfg.g_hi + 1e-9:
        rep.violations.append(
            Violation("transmission", 0, f"exchange {total:.3f} kW exceeds {cfg.g_hi:.0f} by {total - cfg.g_hi:.3f}")
        )
    if total < cfg.g_lo - 1e-9:
        rep.violations.append(
            Violation("transmission", 0, f"exchange {total:.3f} kW below {cfg.g_lo:.0f} by {cfg.g_lo - total:.3f}")
        )
    for i in range(len(loc)):
        if erem[i] > cfg.e_cap + 1e-9:
            rep.violations.append(
                Violation("ev_energy", 0, f"ev {i}: demand {erem[i]:.3f} kWh exceeds battery")
            )
        if loc[i] != ROAD and erem[i] > cfg.proc_rate * trem[i] + 1e-9:
            rep.violations.append(
                Violation("ev_deadline", int(loc[i]), f"ev {i}: {erem[i]:.3f} kWh not deliverable in {trem[i]:.2f} h")
            )
    return rep
