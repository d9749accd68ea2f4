"""Scenario data for the microgrid: configuration, tariff, profiles, EV fleet.

Hourly load/wind/tariff tables are expanded piecewise-constant onto the
half-hour stage grid.  A `Scenario` freezes one realization (wind trace plus
EV itineraries) from a seed; the realization is ground truth for simulation,
while lookahead rollouts re-sample the not-yet-revealed future from the same
distributions.

Time conventions: stage s covers [s*dt, (s+1)*dt) hours of the day, and all
profiles wrap modulo the day when a lookahead window runs past the horizon.
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

ROAD = 0  # location id while driving; buildings are 1..K


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration input."""


# ---------------------------------------------------------------------------
# fleet specifications


@dataclass
class Segment:
    """One parked interval: arrival stage, building, parking time, demand."""

    arrive: int
    building: int
    tau_h: float
    eta_kwh: float


@dataclass
class Itinerary:
    ev: int
    home: int
    segments: list[Segment]


@dataclass
class CommuteFleet:
    """Home -> office -> home daily pattern with Gaussian timing."""

    homes: list[int]
    per_home: list[int]
    office: int
    home_depart: tuple[float, float]  # mean, std hours of day
    office_depart: tuple[float, float]
    trip_h: list[tuple[float, float]]  # per home building: mean, std
    demand_kwh: tuple[float, float]  # uniform bounds
    stochastic_future = True

    @property
    def n_evs(self) -> int:
        return sum(self.per_home)


@dataclass
class ExplicitFleet:
    """Fully specified itineraries; the future is revealed to rollouts."""

    itineraries: list[Itinerary]
    stochastic_future = False

    @property
    def n_evs(self) -> int:
        return len(self.itineraries)


@dataclass
class MatrixFleet:
    """Per-stage row-stochastic location transition matrices (test harness).

    Rows index the current building 1..K, columns the next location 0..K
    (0 = leaves the grid).  Parking time and demand on arrival are fixed.
    The sampled location paths are revealed to rollouts.
    """

    matrices: np.ndarray  # [T, K, K+1]
    start: list[int]
    tau_h: float
    eta_kwh: float
    stochastic_future = False

    @property
    def n_evs(self) -> int:
        return len(self.start)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class MicrogridConfig:
    n_buildings: int
    n_stages: int  # T; T*dt must cover one day
    dt: float  # hours per stage
    window: int  # Tw lookahead stages
    e_cap: float  # kWh EV battery
    p_charge: float  # kW per pile
    psi_c: float  # charger efficiency
    kappa_cap: np.ndarray  # [K] kWh storage capacity
    eta_c: float
    eta_dc: float
    h_cap: float  # kW storage power limit
    soc0: float
    n_bar: np.ndarray  # [K] piles
    g_lo: float  # kW transmission bounds, grid side
    g_hi: float
    prices: np.ndarray  # [T] RMB/kWh
    loads: np.ndarray  # [K, T] kW
    wind_forecast: np.ndarray  # [K, T] kW
    wind_cap: np.ndarray  # [K] kW
    wind_rel_std: float
    fleet: CommuteFleet | ExplicitFleet | MatrixFleet
    start_hour: float = 0.0  # wall-clock hour of stage 0
    n_paths: int = 50
    eps_stop: float = 0.1
    xi: float = 0.1
    max_iter: int = 50
    n_actions: int = 11

    @property
    def n_evs(self) -> int:
        return self.fleet.n_evs

    @property
    def charge_step(self) -> float:
        """kWh delivered to the battery by one charging stage."""
        return self.p_charge * self.dt * self.psi_c

    @property
    def proc_rate(self) -> float:
        """kW effective charging rate used for laxity (P * psi_c)."""
        return self.p_charge * self.psi_c

    def price_at(self, t: int) -> float:
        return float(self.prices[t % self.n_stages])

    def load_at(self, k: int, t: int) -> float:
        return float(self.loads[k - 1, t % self.n_stages])

    def forecast_at(self, k: int, t: int) -> float:
        return float(self.wind_forecast[k - 1, t % self.n_stages])

    def validate(self) -> None:
        if self.n_buildings < 1:
            raise ConfigError("need at least one building")
        if abs(self.n_stages * self.dt - 24.0) > 1e-9:
            raise ConfigError("stage grid must cover exactly one day")
        if not (0.0 < self.psi_c <= 1.0):
            raise ConfigError("charger efficiency must be in (0, 1]")
        if not (0.0 < self.eta_c <= 1.0 and 0.0 < self.eta_dc <= 1.0):
            raise ConfigError("storage efficiencies must be in (0, 1]")
        if self.g_lo >= self.g_hi:
            raise ConfigError("transmission bounds must satisfy g_lo < g_hi")
        if self.window < 2:
            raise ConfigError("lookahead window needs at least two stages")
        if not (0.0 <= self.start_hour < 24.0):
            raise ConfigError("start_hour must lie in [0, 24)")
        if self.n_actions < 2:
            raise ConfigError("need at least two charge-ratio actions")
        for name, arr, n in (
            ("prices", self.prices, self.n_stages),
            ("kappa_cap", self.kappa_cap, self.n_buildings),
            ("n_bar", self.n_bar, self.n_buildings),
            ("wind_cap", self.wind_cap, self.n_buildings),
        ):
            if len(arr) != n:
                raise ConfigError(f"{name} must have length {n}")
        if self.loads.shape != (self.n_buildings, self.n_stages):
            raise ConfigError("loads must be shaped [buildings, stages]")
        if self.wind_forecast.shape != (self.n_buildings, self.n_stages):
            raise ConfigError("wind forecast must be shaped [buildings, stages]")
        if np.any(self.n_bar <= 0):
            raise ConfigError("every building needs at least one pile")
        if np.any(self.prices < 0) or np.any(self.loads < 0):
            raise ConfigError("prices and loads must be non-negative")
        if np.any(self.wind_forecast < 0) or np.any(self.wind_cap < 0):
            raise ConfigError("wind profiles must be non-negative")
        if isinstance(self.fleet, MatrixFleet):
            m = self.fleet.matrices
            if m.shape != (self.n_stages, self.n_buildings, self.n_buildings + 1):
                raise ConfigError("transition matrices must be [T, K, K+1]")
            if np.any(m < 0) or np.any(np.abs(m.sum(axis=2) - 1.0) > 1e-9):
                raise ConfigError("transition matrix rows must sum to one")
        if isinstance(self.fleet, ExplicitFleet):
            for it in self.fleet.itineraries:
                _validate_itinerary(self, it)
        if isinstance(self.fleet, CommuteFleet):
            f = self.fleet
            if len(f.per_home) != len(f.homes) or len(f.trip_h) != len(f.homes):
                raise ConfigError("per-home fleet lists must align with homes")
            for b in f.homes + [f.office]:
                if not (1 <= b <= self.n_buildings):
                    raise ConfigError("fleet references an unknown building")


def _validate_itinerary(cfg: MicrogridConfig, it: Itinerary) -> None:
    prev_end = -1
    for seg in it.segments:
        if not (1 <= seg.building <= cfg.n_buildings):
            raise ConfigError(f"ev {it.ev}: unknown building {seg.building}")
        if seg.arrive <= prev_end and seg.arrive != 0:
            raise ConfigError(f"ev {it.ev}: overlapping segments")
        if seg.tau_h < cfg.dt - 1e-9:
            raise ConfigError(f"ev {it.ev}: parking shorter than one stage")
        if seg.eta_kwh < 0 or seg.eta_kwh > cfg.e_cap:
            raise ConfigError(f"ev {it.ev}: demand outside [0, battery]")
        prev_end = seg.arrive + int(round(seg.tau_h / cfg.dt)) - 1


# ---------------------------------------------------------------------------
# TOML loading


def _expand_hourly(values, n_stages: int, dt: float, start_hour: float) -> np.ndarray:
    """Piecewise-constant expansion of 24 hourly values onto the stage grid.

    Hourly rows are wall-clock (index 0 covers 00:00-01:00); stage 0 starts
    at start_hour.
    """
    vals = np.asarray(values, dtype=float)
    if vals.shape != (24,):
        raise ConfigError("hourly profile needs exactly 24 values")
    hours = (start_hour + np.arange(n_stages) * dt).astype(int) % 24
    return vals[hours]


def _profile(tab, hourly_key: str, stage_key: str, n_stages: int, dt: float, start_hour: float):
    if stage_key in tab:
        arr = np.asarray(tab[stage_key], dtype=float)
        if arr.shape[-1] != n_stages:
            raise ConfigError(f"{stage_key} must have {n_stages} entries")
        return arr
    if hourly_key in tab:
        raw = tab[hourly_key]
        if raw and isinstance(raw[0], (list, tuple)):
            return np.stack([_expand_hourly(row, n_stages, dt, start_hour) for row in raw])
        return _expand_hourly(raw, n_stages, dt, start_hour)
    raise ConfigError(f"missing {hourly_key} or {stage_key}")


def config_from_dict(raw: dict) -> MicrogridConfig:
    try:
        mg = raw["microgrid"]
        k = int(mg["buildings"])
        t = int(mg["stages"])
        dt = float(mg["stage_hours"])
        window = int(mg["window_stages"])
        start_hour = float(mg.get("start_hour", 0.0))
        ev = raw["ev"]
        hes = raw["hes"]
        opt = raw.get("optimizer", {})
        lim = raw["limits"]

        prices = np.asarray(
            _profile(raw["tariff"], "rmb_per_kwh_hourly", "rmb_per_kwh", t, dt, start_hour),
            dtype=float,
        )
        loads = np.asarray(_profile(raw["load"], "hourly_kw", "stage_kw", t, dt, start_hour))
        if loads.ndim != 2 or loads.shape[0] != k:
            raise ConfigError("need one load profile per building")
        wind_tab = raw["wind"]
        forecast = np.asarray(
            _profile(wind_tab, "forecast_hourly_kw", "forecast_stage_kw", t, dt, start_hour)
        )
        if forecast.ndim != 2 or forecast.shape[0] != k:
            raise ConfigError("need one wind forecast per building")
        wind_cap = np.asarray(
            wind_tab.get("capacity_kw", forecast.max(axis=1)), dtype=float
        )

        kappa = hes["capacity_kwh"]
        kappa = np.full(k, float(kappa)) if np.isscalar(kappa) else np.asarray(kappa, float)

        cfg = MicrogridConfig(
            n_buildings=k,
            n_stages=t,
            dt=dt,
            window=window,
            e_cap=float(ev["battery_kwh"]),
            p_charge=float(ev["charge_kw"]),
            psi_c=float(ev["charge_eff"]),
            kappa_cap=kappa,
            eta_c=float(hes["eff_charge"]),
            eta_dc=float(hes["eff_discharge"]),
            h_cap=float(hes["power_kw"]),
            soc0=float(hes.get("initial_soc", 0.5)),
            n_bar=np.asarray(raw["piles"]["per_building"], dtype=int),
            g_lo=float(lim["g_lo_kw"]),
            g_hi=float(lim["g_hi_kw"]),
            prices=prices,
            loads=loads,
            wind_forecast=forecast,
            wind_cap=wind_cap,
            wind_rel_std=float(wind_tab.get("rel_std", 0.10)),
            fleet=_fleet_from_dict(raw["fleet"], t, k, start_hour),
            start_hour=start_hour,
            n_paths=int(opt.get("paths", 50)),
            eps_stop=float(opt.get("eps_stop", 0.1)),
            xi=float(opt.get("step_xi", 0.1)),
            max_iter=int(opt.get("max_iter", 50)),
            n_actions=int(opt.get("actions", 11)),
        )
    except KeyError as exc:
        raise ConfigError(f"missing configuration key: {exc}") from exc
    cfg.validate()
    return cfg


def _fleet_from_dict(tab: dict, t: int, k: int, start_hour: float = 0.0):
    model = tab.get("model", "commute")
    if model == "commute":
        homes = [int(b) for b in tab["homes"]]
        trips = [tuple(float(x) for x in pair) for pair in tab["trip_h"]]
        # departure times are wall-clock; the fleet works in hours since stage 0
        hd = [float(x) for x in tab["home_depart_h"]]
        od = [float(x) for x in tab["office_depart_h"]]
        return CommuteFleet(
            homes=homes,
            per_home=[int(n) for n in tab["per_home"]],
            office=int(tab["office"]),
            home_depart=((hd[0] - start_hour) % 24.0, hd[1]),
            office_depart=((od[0] - start_hour) % 24.0, od[1]),
            trip_h=trips,
            demand_kwh=tuple(float(x) for x in tab["demand_kwh"]),
        )
    if model == "explicit":
        itins = []
        for i, ev_tab in enumerate(tab["ev"]):
            segs = [
                Segment(int(s[0]), int(s[1]), float(s[2]), float(s[3]))
                for s in ev_tab["segments"]
            ]
            itins.append(Itinerary(ev=i, home=segs[0].building, segments=segs))
        return ExplicitFleet(itineraries=itins)
    if model == "matrix":
        mats = np.asarray(tab["matrices"], dtype=float)
        if mats.ndim == 2:  # single matrix replicated across stages
            mats = np.broadcast_to(mats, (t,) + mats.shape).copy()
        return MatrixFleet(
            matrices=mats,
            start=[int(b) for b in tab["start"]],
            tau_h=float(tab["tau_h"]),
            eta_kwh=float(tab["eta_kwh"]),
        )
    raise ConfigError(f"unknown fleet model {model!r}")


def load_config(path) -> MicrogridConfig:
    with open(path, "rb") as fh:
        try:
            raw = _toml.load(fh)
        except _toml.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(raw)


def default_config() -> MicrogridConfig:
    import importlib.resources as res

    with res.files("evgrid").joinpath("data/default.toml").open("rb") as fh:
        return config_from_dict(_toml.load(fh))


def scenario_hash(cfg: MicrogridConfig, seed: int) -> str:
    """Digest binding outputs to (configuration, scenario seed)."""
    h = hashlib.sha256()
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, np.ndarray):
            h.update(f.name.encode())
            h.update(np.ascontiguousarray(v, dtype=np.float64).tobytes())
        elif dataclasses.is_dataclass(v):
            h.update(_dataclass_bytes(v))
        else:
            h.update(f"{f.name}={v!r};".encode())
    h.update(f"seed={int(seed)}".encode())
    return h.hexdigest()[:16]


def _dataclass_bytes(obj) -> bytes:
    parts = [type(obj).__name__.encode()]
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, np.ndarray):
            parts.append(np.ascontiguousarray(v, dtype=np.float64).tobytes())
        elif isinstance(v, list) and v and dataclasses.is_dataclass(v[0]):
            parts.extend(_dataclass_bytes(x) for x in v)
        else:
            parts.append(f"{f.name}={v!r};".encode())
    return b"".join(parts)


# ---------------------------------------------------------------------------
# sampling primitives


def sample_wind(forecast: float, cap: float, rel_std: float, rng) -> float:
    """Realized wind: Normal(forecast, rel_std*forecast) clamped to [0, cap]."""
    if forecast <= 0.0:
        rng.standard_normal()  # keep stream alignment
        return 0.0
    draw = forecast + rel_std * forecast * rng.standard_normal()
    return float(min(max(draw, 0.0), cap))


def sample_location(row: np.ndarray, rng) -> int:
    """Next location 0..K drawn from one transition-matrix row."""
    u = rng.random()
    acc = 0.0
    for j, p in enumerate(row):
        acc += p
        if u < acc:
            return j
    return len(row) - 1


def sample_charge_demand(rng, lo: float, hi: float, feasible_max: float) -> float:
    """Uniform demand, resampled (<=100 times) then clamped to feasibility."""
    x = rng.uniform(lo, hi)
    for _ in range(100):
        if x <= feasible_max:
            return float(x)
        x = rng.uniform(lo, hi)
    return float(min(x, feasible_max))


def _demand_vec(rng, size: int, lo: float, hi: float, feasible_max) -> np.ndarray:
    """Vectorized equivalent of sample_charge_demand across rollout paths."""
    x = rng.uniform(lo, hi, size)
    cap = np.broadcast_to(np.asarray(feasible_max, dtype=float), (size,))
    for _ in range(100):
        bad = x > cap
        if not bad.any():
            break
        x[bad] = rng.uniform(lo, hi, int(bad.sum()))
    return np.minimum(x, cap)


def _snap(hours: float, dt: float) -> int:
    """Snap an absolute time in hours to the nearest stage boundary."""
    return int(math.floor(hours / dt + 0.5))


# ---------------------------------------------------------------------------
# scenario realization


@dataclass
class EvPhase:
    """Where an EV sits in its daily pattern at some stage (controller view)."""

    parked: bool
    segment: int  # index into the remaining pattern
    depart_stage: int  # valid while parked
    depart_from: int  # building it left / will leave


class Scenario:
    """One realized day: wind trace plus EV itineraries, from a master seed."""

    def __init__(self, cfg: MicrogridConfig, seed: int):
        cfg.validate()
        self.cfg = cfg
        self.seed = int(seed)
        self.hash = scenario_hash(cfg, seed)
        self.horizon = cfg.n_stages + cfg.window + 1
        self._build_wind()
        self._build_fleet()

    # -- wind ---------------------------------------------------------------

    def _build_wind(self):
        cfg = self.cfg
        self.wind_true = np.zeros((cfg.n_buildings, self.horizon))
        for k in range(1, cfg.n_buildings + 1):
            gen = rngmod.substream(self.seed, rngmod.SCENARIO_WIND, k)
            for t in range(self.horizon):
                self.wind_true[k - 1, t] = sample_wind(
                    cfg.forecast_at(k, t), cfg.wind_cap[k - 1], cfg.wind_rel_std, gen
                )

    # -- fleet --------------------------------------------------------------

    def _build_fleet(self):
        cfg = self.cfg
        n = cfg.n_evs
        hz = self.horizon
        # dense true timeline: location per stage plus (tau, eta) at arrivals
        self.loc_seq = np.zeros((n, hz), dtype=np.int8)
        self.arr_tau = np.zeros((n, hz))
        self.arr_eta = np.zeros((n, hz))
        fleet = cfg.fleet
        if isinstance(fleet, CommuteFleet):
            self.itineraries = self._sample_commute()
        elif isinstance(fleet, ExplicitFleet):
            self.itineraries = fleet.itineraries
        else:
            self.itineraries = self._sample_matrix_paths()
        for it in self.itineraries:
            for seg in it.segments:
                stay = max(1, int(round(seg.tau_h / cfg.dt)))
                a, b = seg.arrive, min(seg.arrive + stay, hz)
                if a >= hz:
                    continue
                self.loc_seq[it.ev, a:b] = seg.building
                self.arr_tau[it.ev, a] = seg.tau_h
                self.arr_eta[it.ev, a] = seg.eta_kwh

    def _sample_commute(self) -> list[Itinerary]:
        cfg = self.cfg
        f: CommuteFleet = cfg.fleet
        dt = cfg.dt
        itins = []
        ev = 0
        for hi, home in enumerate(f.homes):
            trip_mu, trip_sd = f.trip_h[hi]
            for _ in range(f.per_home[hi]):
                gen = rngmod.substream(self.seed, rngmod.SCENARIO_FLEET, ev)
                # fixed draw order: times first, then demands
                d1 = f.home_depart[0] + f.home_depart[1] * gen.standard_normal()
                trip1 = trip_mu + trip_sd * gen.standard_normal()
                d2 = f.office_depart[0] + f.office_depart[1] * gen.standard_normal()
                trip2 = trip_mu + trip_sd * gen.standard_normal()
                d3 = 24.0 + f.home_depart[0] + f.home_depart[1] * gen.standard_normal()
                dep1 = max(1, _snap(d1, dt))
                arr1 = dep1 + max(1, _snap(trip1, dt))
                dep2 = max(arr1 + 1, _snap(d2, dt))
                arr2 = dep2 + max(1, _snap(trip2, dt))
                dep3 = max(arr2 + 1, _snap(d3, dt))
                tau0 = dep1 * dt
                tau_office = (dep2 - arr1) * dt
                tau_eve = (dep3 - arr2) * dt
                lo, hi_d = f.demand_kwh
                segs = [
                    Segment(0, home, tau0, self._demand(gen, lo, hi_d, tau0)),
                    Segment(arr1, f.office, tau_office, self._demand(gen, lo, hi_d, tau_office)),
                    Segment(arr2, home, tau_eve, self._demand(gen, lo, hi_d, tau_eve)),
                ]
                itins.append(Itinerary(ev=ev, home=home, segments=segs))
                ev += 1
        return itins

    def _demand(self, gen, lo: float, hi: float, tau_h: float) -> float:
        cap = min(self.cfg.e_cap, self.cfg.proc_rate * tau_h)
        return sample_charge_demand(gen, lo, hi, cap)

    def _sample_matrix_paths(self) -> list[Itinerary]:
        cfg = self.cfg
        f: MatrixFleet = cfg.fleet
        itins = []
        for i, start in enumerate(f.start):
            gen = rngmod.substream(self.seed, rngmod.SCENARIO_FLEET, i)
            segs = [Segment(0, start, f.tau_h, f.eta_kwh)]
            loc = start
            for t in range(self.horizon - 1):
                if loc == ROAD:
                    break  # no return row in the matrix form
                nxt = sample_location(f.matrices[t % cfg.n_stages, loc - 1], gen)
                if nxt != loc:
                    # close the current segment at its realized length
                    segs[-1].tau_h = (t + 1 - segs[-1].arrive) * cfg.dt
                    if nxt != ROAD:
                        segs.append(Segment(t + 1, nxt, f.tau_h, f.eta_kwh))
                    loc = nxt
            itins.append(Itinerary(ev=i, home=start, segments=segs))
        return itins

    # -- true-trajectory access ----------------------------------------------

    def initial_state(self):
        """(loc, t_rem, e_rem) arrays at stage 0 plus storage SOC."""
        cfg = self.cfg
        n = cfg.n_evs
        loc = self.loc_seq[:, 0].copy()
        trem = np.where(loc > 0, self.arr_tau[:, 0], 0.0)
        erem = np.where(loc > 0, self.arr_eta[:, 0], 0.0)
        soc = np.full(cfg.n_buildings, cfg.soc0)
        return loc, trem.copy(), erem.copy(), soc

    def true_wind(self, t: int) -> np.ndarray:
        return self.wind_true[:, t]

    def arrivals_at(self, t: int):
        """(loc, tau, eta) arrival arrays for stage t; loc 0 where none."""
        mask = (self.loc_seq[:, t] > 0) & (self.arr_tau[:, t] > 0)
        loc = np.where(mask, self.loc_seq[:, t], 0).astype(np.int8)
        return loc, np.where(mask, self.arr_tau[:, t], 0.0), np.where(mask, self.arr_eta[:, t], 0.0)

    # -- controller's model of the future ------------------------------------

    def ev_phase(self, ev: int, t0: int, loc: int, trem: float) -> EvPhase:
        """Locate ev in its pattern given its observed state at t0."""
        segs = self.itineraries[ev].segments
        if loc > 0:
            # next pattern segment strictly after the current one
            nxt = 0
            while nxt < len(segs) and segs[nxt].arrive <= t0:
                nxt += 1
            dep = t0 + max(1, int(round(trem / self.cfg.dt)))
            return EvPhase(True, nxt, dep, loc)
        nxt = 0
        while nxt < len(segs) and segs[nxt].arrive <= t0:
            nxt += 1
        if nxt == 0:
            return EvPhase(False, 0, t0, ROAD)
        dep_from = segs[nxt - 1].building
        return EvPhase(False, nxt, t0, dep_from)

    def window_true_arrivals(self, t0: int, n_paths: int):
        """Revealed future: true arrivals broadcast to every rollout path."""
        cfg = self.cfg
        tw, n = cfg.window, cfg.n_evs
        sl = slice(t0, t0 + tw)
        loc = np.broadcast_to(self.loc_seq[:, sl].T * (self.arr_tau[:, sl].T > 0), (n_paths, tw, n))
        arr_loc = np.ascontiguousarray(loc, dtype=np.int8)
        arr_loc[:, 0, :] = 0  # stage t0 is part of the observed state
        tau = np.broadcast_to(self.arr_tau[:, sl].T, (n_paths, tw, n)).copy()
        eta = np.broadcast_to(self.arr_eta[:, sl].T, (n_paths, tw, n)).copy()
        tau[arr_loc == 0] = 0.0
        eta[arr_loc == 0] = 0.0
        return arr_loc, tau, eta

    def sample_window_arrivals(self, t0: int, loc, trem, n_paths: int, gen):
        """Per-path future arrivals inside (t0, t0+Tw) from the fleet model.

        Parked EVs have known departures (declared parking time); trips,
        later parking times and demands are re-drawn per path.  EV order and
        the per-EV draw sequence are fixed so the stream is reproducible.
        """
        cfg = self.cfg
        if not cfg.fleet.stochastic_future:
            return self.window_true_arrivals(t0, n_paths)
        f: CommuteFleet = cfg.fleet
        tw, n, dt = cfg.window, cfg.n_evs, cfg.dt
        arr_loc = np.zeros((n_paths, tw, n), dtype=np.int8)
        arr_tau = np.zeros((n_paths, tw, n))
        arr_eta = np.zeros((n_paths, tw, n))
        lo, hi_d = f.demand_kwh
        for ev in range(n):
            ph = self.ev_phase(ev, t0, int(loc[ev]), float(trem[ev]))
            segs = self.itineraries[ev].segments
            if ph.segment >= len(segs) and ph.parked:
                continue  # final parked segment, nothing left to reveal
            home = self.itineraries[ev].home
            hidx = f.homes.index(home)
            trip_mu, trip_sd = f.trip_h[hidx]
            if ph.parked:
                if ph.depart_stage >= t0 + tw:
                    continue
                dep = np.full(n_paths, ph.depart_stage)
            else:
                # in transit: arrival = departure + trip, conditioned on
                # the trip still being under way at t0
                dep_stage = segs[ph.segment - 1].arrive + max(
                    1, int(round(segs[ph.segment - 1].tau_h / dt))
                ) if ph.segment > 0 else 0
                dep = np.full(n_paths, dep_stage)
            seg_idx = ph.segment
            parked_now = ph.parked
            active = np.ones(n_paths, dtype=bool)
            for _hop in range(4):  # bounded events per window
                if seg_idx >= len(segs) or not active.any():
                    break
                target = segs[seg_idx].building
                trips = trip_mu + trip_sd * gen.standard_normal(n_paths)
                trip_stages = np.maximum(1, np.floor(trips / dt + 0.5).astype(int))
                arrive = dep + trip_stages
                if not parked_now:
                    # condition on "not yet arrived at t0"
                    arrive = np.maximum(arrive, t0 + 1)
                if target == f.office:
                    nxt_dep_h = f.office_depart[0] + f.office_depart[1] * gen.standard_normal(n_paths)
                else:
                    day = (dep * dt) // 24.0 + 1.0
                    nxt_dep_h = 24.0 * day + f.home_depart[0] + f.home_depart[1] * gen.standard_normal(n_paths)
                nxt_dep = np.maximum(arrive + 1, np.floor(nxt_dep_h / dt + 0.5).astype(int))
                tau_h = (nxt_dep - arrive) * dt
                cap = np.minimum(cfg.e_cap, cfg.proc_rate * tau_h)
                eta = _demand_vec(gen, n_paths, lo, hi_d, cap)
                inside = active & (arrive > t0) & (arrive < t0 + tw)
                off = arrive[inside] - t0
                arr_loc[inside, off, ev] = target
                arr_tau[inside, off, ev] = tau_h[inside]
                arr_eta[inside, off, ev] = eta[inside]
                active = active & (nxt_dep < t0 + tw)
                dep = nxt_dep
                parked_now = True
                seg_idx += 1
        return arr_loc, arr_tau, arr_eta

    def transition_matrices(self) -> np.ndarray:
        """Empirical per-stage matrices of the realized location process."""
        cfg = self.cfg
        k, t = cfg.n_buildings, cfg.n_stages
        out = np.zeros((t, k, k + 1))
        counts = np.zeros((t, k))
        for s in range(t):
            cur = self.loc_seq[:, s]
            nxt = self.loc_seq[:, s + 1]
            for b in range(1, k + 1):
                sel = cur == b
                counts[s, b - 1] = sel.sum()
                for j in range(k + 1):
                    out[s, b - 1, j] = np.sum(sel & (nxt == j))
        with np.errstate(invalid="ignore"):
            out /= counts[:, :, None]
        for s in range(t):
            for b in range(k):
                if counts[s, b] == 0:  # no observations: stay put
                    out[s, b] = 0.0
                    out[s, b, b + 1] = 1.0
        return out
