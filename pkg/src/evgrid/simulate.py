"""Rollout driver: kernel selection, window assembly, true-trajectory steps.

A *window* is the lookahead horizon used both by the gradient estimator and
by cost evaluation: ``n_paths`` sample paths, each ``window`` stages long,
starting from the observed state at stage ``t0``.  All randomness (future
wind, future arrivals, action draws) is drawn up front with
:func:`evgrid.rng.substream` so a window is reproducible from
``(seed, t0, iteration)`` alone and both kernels see identical inputs.

Path p writes only output rows p, so the path range can be split across
workers without changing a single byte of the result.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernel_py
from .dynamics import TIME_EPS, building_stage
from .events import classify_evs, event_of
from .policy import PolicyTable, action_grid, charge_count, mllp_select
from .rng import ROLLOUT_ACTIONS, ROLLOUT_WIND, ROLLOUT_ARRIVALS, substream
from .scenario import MicrogridConfig, Scenario

try:
    from . import _speedups as _ext
except ImportError:  # pragma: no cover - build without the extension
    _ext = None

HAVE_EXTENSION = _ext is not None


def get_kernel(name: str = "auto"):
    """Resolve a rollout kernel by name: auto, cython or python."""
    if name == "auto":
        return _ext if _ext is not None else _kernel_py
    if name == "cython":
        if _ext is None:
            raise RuntimeError("compiled kernel not available; reinstall with the extension built")
        return _ext
    if name == "python":
        return _kernel_py
    raise ValueError(f"unknown kernel {name!r}")


def kernel_name(kernel) -> str:
    return "python" if kernel is _kernel_py else "cython"


@dataclass
class GridState:
    """Observable system state at the start of a stage."""

    loc: np.ndarray  # int8 [n_evs], 0 = on the road
    trem: np.ndarray  # float [n_evs], remaining parking time, hours
    erem: np.ndarray  # float [n_evs], remaining charge demand, kWh
    soc: np.ndarray  # float [n_buildings]

    def copy(self) -> "GridState":
        return GridState(self.loc.copy(), self.trem.copy(), self.erem.copy(), self.soc.copy())


def initial_state(scn: Scenario) -> GridState:
    loc, trem, erem, soc = scn.initial_state()
    return GridState(loc, trem, erem, soc)


@dataclass
class WindowInputs:
    n_paths: int
    window: int
    n_buildings: int
    scalars: tuple  # (dt, p_charge, charge_step, proc_rate, eta_c, eta_dc, h_cap)
    kappa: np.ndarray
    nbar: np.ndarray
    wind_cap: np.ndarray
    prices: np.ndarray
    loads: np.ndarray
    wind: np.ndarray
    weights: np.ndarray
    alpha: np.ndarray
    act_u: np.ndarray
    loc0: np.ndarray
    trem0: np.ndarray
    erem0: np.ndarray
    soc0: np.ndarray
    arr_loc: np.ndarray
    arr_tau: np.ndarray
    arr_eta: np.ndarray
    forced: np.ndarray


@dataclass
class WindowOutputs:
    cost: np.ndarray  # [n_paths, window, K] stage cost, RMB
    g: np.ndarray  # [n_paths, window, K] grid exchange, kW
    bins: np.ndarray  # int8, event bin
    act: np.ndarray  # int8, chosen action index
    n_m: np.ndarray  # int32
    n_c: np.ndarray  # int32


def build_window_inputs(
    cfg: MicrogridConfig,
    scn: Scenario,
    t0: int,
    state: GridState,
    policy: PolicyTable,
    *,
    seed: int,
    n_paths: int | None = None,
    iteration: int = 0,
    true_future: bool = False,
    forced: np.ndarray | None = None,
) -> WindowInputs:
    """Assemble every kernel argument for a window starting at ``t0``.

    ``true_future`` reveals the actual wind and arrivals to every path
    (perfect information); otherwise offsets >= 1 are sampled from the
    forecast / fleet model.  ``forced[w, k] >= 0`` pins the action index
    instead of sampling from the policy.
    """
    K = cfg.n_buildings
    tw = cfg.window
    L = cfg.n_paths if n_paths is None else n_paths

    idx = [(t0 + w) % cfg.n_stages for w in range(tw)]
    prices = np.ascontiguousarray(cfg.prices[idx])
    loads = np.ascontiguousarray(cfg.loads[:, idx])
    weights = np.ascontiguousarray(policy.weights[:, idx].swapaxes(0, 1))

    wind = np.empty((L, K, tw))
    wind[:, :, 0] = scn.true_wind(t0)
    if true_future:
        for w in range(1, tw):
            wind[:, :, w] = scn.true_wind(t0 + w)
    else:
        fc = cfg.wind_forecast[:, idx[1:]]  # [K, tw-1]
        gen = substream(seed, ROLLOUT_WIND, t0, iteration)
        z = gen.standard_normal((L, K, tw - 1))
        draw = fc + cfg.wind_rel_std * fc * z
        np.clip(draw, 0.0, cfg.wind_cap[None, :, None], out=draw)
        wind[:, :, 1:] = draw

    gen_act = substream(seed, ROLLOUT_ACTIONS, t0, iteration)
    act_u = gen_act.random((L, tw, K))

    if true_future or not cfg.fleet.stochastic_future:
        arr_loc, arr_tau, arr_eta = scn.window_true_arrivals(t0, L)
    else:
        gen_arr = substream(seed, ROLLOUT_ARRIVALS, t0, iteration)
        arr_loc, arr_tau, arr_eta = scn.sample_window_arrivals(t0, state.loc, state.trem, L, gen_arr)

    if forced is None:
        forced = np.full((tw, K), -1, dtype=np.int32)
    else:
        forced = np.ascontiguousarray(forced, dtype=np.int32)

    return WindowInputs(
        n_paths=L,
        window=tw,
        n_buildings=K,
        scalars=(cfg.dt, cfg.p_charge, cfg.charge_step, cfg.proc_rate, cfg.eta_c, cfg.eta_dc, cfg.h_cap),
        kappa=np.ascontiguousarray(cfg.kappa_cap, dtype=np.float64),
        nbar=np.ascontiguousarray(cfg.n_bar, dtype=np.float64),
        wind_cap=np.ascontiguousarray(cfg.wind_cap, dtype=np.float64),
        prices=prices,
        loads=np.ascontiguousarray(loads),
        wind=wind,
        weights=weights,
        alpha=policy.alpha.copy(),
        act_u=act_u,
        loc0=np.ascontiguousarray(state.loc, dtype=np.int8),
        trem0=np.ascontiguousarray(state.trem, dtype=np.float64),
        erem0=np.ascontiguousarray(state.erem, dtype=np.float64),
        soc0=np.ascontiguousarray(state.soc, dtype=np.float64),
        arr_loc=arr_loc,
        arr_tau=arr_tau,
        arr_eta=arr_eta,
        forced=forced,
    )


def run_window(inputs: WindowInputs, kernel=None, workers: int = 1) -> WindowOutputs:
    """Simulate all paths of a window, optionally split across threads."""
    if kernel is None:
        kernel = get_kernel()
    L, tw, K = inputs.n_paths, inputs.window, inputs.n_buildings
    out = WindowOutputs(
        cost=np.zeros((L, tw, K)),
        g=np.zeros((L, tw, K)),
        bins=np.zeros((L, tw, K), dtype=np.int8),
        act=np.zeros((L, tw, K), dtype=np.int8),
        n_m=np.zeros((L, tw, K), dtype=np.int32),
        n_c=np.zeros((L, tw, K), dtype=np.int32),
    )

    def block(lo: int, hi: int) -> None:
        kernel.simulate_paths(
            lo,
            hi,
            *inputs.scalars,
            inputs.kappa,
            inputs.nbar,
            inputs.wind_cap,
            inputs.prices,
            inputs.loads,
            inputs.wind,
            inputs.weights,
            inputs.alpha,
            inputs.act_u,
            inputs.loc0,
            inputs.trem0,
            inputs.erem0,
            inputs.soc0,
            inputs.arr_loc,
            inputs.arr_tau,
            inputs.arr_eta,
            inputs.forced,
            out.cost,
            out.g,
            out.bins,
            out.act,
            out.n_m,
            out.n_c,
        )

    workers = max(1, min(workers, L))
    if workers == 1:
        block(0, L)
    else:
        bounds = [round(i * L / workers) for i in range(workers + 1)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = [
                pool.submit(block, lo, hi)
                for lo, hi in zip(bounds[:-1], bounds[1:])
                if hi > lo
            ]
            for f in futs:
                f.result()
    return out


@dataclass
class StageRecord:
    """True-trajectory outcome of one stage, per building."""

    t: int
    value: np.ndarray  # event values
    bin: np.ndarray  # int, event bins
    action: np.ndarray  # int, chosen action index
    n_m: np.ndarray
    n_c: np.ndarray
    count: np.ndarray  # EVs charged
    p_ev: np.ndarray  # kW
    wind: np.ndarray  # kW
    load: np.ndarray  # kW
    h: np.ndarray  # storage dispatch, kW
    g: np.ndarray  # grid exchange, kW
    cost: np.ndarray  # RMB
    soc: np.ndarray  # start-of-stage storage SOC
    price: float = 0.0  # RMB/kWh

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.cost))

    @property
    def total_g(self) -> float:
        return float(np.sum(self.g))


def stage_events(cfg: MicrogridConfig, scn: Scenario, t0: int, state: GridState):
    """(value, bin, n_m, n_c) arrays over buildings for the observed state."""
    K = cfg.n_buildings
    wind = scn.true_wind(t0)
    value = np.zeros(K)
    bins = np.zeros(K, dtype=int)
    n_m = np.zeros(K, dtype=int)
    n_c = np.zeros(K, dtype=int)
    for k in range(1, K + 1):
        m, c = _classify(cfg, state, k)
        v, b = event_of(
            m, c, float(state.soc[k - 1]), float(wind[k - 1]),
            n_bar=cfg.n_bar[k - 1], wind_cap=cfg.wind_cap[k - 1],
        )
        value[k - 1], bins[k - 1], n_m[k - 1], n_c[k - 1] = v, b, m, c
    return value, bins, n_m, n_c


def _classify(cfg: MicrogridConfig, state: GridState, k: int):
    return classify_evs(state.loc, state.trem, state.erem, k, dt=cfg.dt, proc_rate=cfg.proc_rate)


def true_step(
    cfg: MicrogridConfig,
    scn: Scenario,
    t0: int,
    state: GridState,
    alphas=None,
    action_idx=None,
    charged_override=None,
):
    """Advance the true trajectory one stage with the given charge ratios.

    ``alphas[k-1]`` is the fraction of deferrable EVs charged at building k;
    alternatively ``charged_override`` names the charged EVs directly (used
    by schedule replays that bypass the ratio action space).  Returns
    ``(record, next_state)``; the transition uses the true arrivals at
    ``t0 + 1`` and the true wind at ``t0``.
    """
    K = cfg.n_buildings
    wind = scn.true_wind(t0)
    loads = cfg.loads[:, t0 % cfg.n_stages]
    price = cfg.price_at(t0)
    value, bins, n_m, n_c = stage_events(cfg, scn, t0, state)

    counts = np.zeros(K, dtype=int)
    p_ev = np.zeros(K)
    h = np.zeros(K)
    g = np.zeros(K)
    cost = np.zeros(K)
    soc_next = state.soc.copy()
    if charged_override is not None:
        charged = np.asarray(charged_override, dtype=bool).copy()
        charged &= (state.loc > 0) & (state.erem > 0.0)
    else:
        charged = np.zeros(cfg.n_evs, dtype=bool)
    lax_thr = cfg.dt - TIME_EPS
    for k in range(1, K + 1):
        if charged_override is not None:
            count = int(np.count_nonzero(charged & (state.loc == k)))
        else:
            count = charge_count(int(n_m[k - 1]), int(n_c[k - 1]), float(alphas[k - 1]))
            member = (state.loc == k) & (state.erem > 0.0) & (state.trem >= lax_thr)
            ids = np.flatnonzero(member)
            chosen = mllp_select(ids, state.trem[ids], state.erem[ids], count, proc_rate=cfg.proc_rate)
            charged[chosen] = True
        counts[k - 1] = count
        p_ev[k - 1] = count * cfg.p_charge
        h[k - 1], g[k - 1], cost[k - 1], soc_next[k - 1] = building_stage(
            float(wind[k - 1]),
            float(loads[k - 1]),
            float(p_ev[k - 1]),
            float(state.soc[k - 1]),
            price,
            kappa=cfg.kappa_cap[k - 1],
            eta_c=cfg.eta_c,
            eta_dc=cfg.eta_dc,
            h_cap=cfg.h_cap,
            dt=cfg.dt,
        )

    rec = StageRecord(
        t=t0,
        value=value,
        bin=bins,
        action=np.asarray(action_idx if action_idx is not None else [-1] * K, dtype=int),
        n_m=n_m,
        n_c=n_c,
        count=counts,
        p_ev=p_ev,
        wind=np.asarray(wind, dtype=float).copy(),
        load=np.asarray(loads, dtype=float).copy(),
        h=h,
        g=g,
        cost=cost,
        soc=state.soc.copy(),
        price=price,
    )

    # EV transition mirroring the rollout kernels, then true arrivals
    dep_thr = cfg.dt + TIME_EPS
    parked = state.loc > 0
    departing = parked & (state.trem <= dep_thr)
    staying = parked & ~departing
    e_dec = np.where(charged, np.maximum(state.erem - cfg.charge_step, 0.0), state.erem)
    trem = np.where(staying, state.trem - cfg.dt, 0.0)
    erem = np.where(staying, e_dec, 0.0)
    loc = np.where(staying, state.loc, 0).astype(np.int8)
    al, at, ae = scn.arrivals_at(t0 + 1)
    has = al > 0
    loc = np.where(has, al, loc).astype(np.int8)
    trem = np.where(has, at, trem)
    erem = np.where(has, ae, erem)
    return rec, GridState(loc, trem, erem, soc_next)


def window_cost(out: WindowOutputs) -> float:
    """Mean over paths of the summed window cost."""
    return float(out.cost.sum(axis=(1, 2)).mean())
