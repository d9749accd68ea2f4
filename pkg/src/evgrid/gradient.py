"""Policy-gradient estimation from windowed sample paths.

The estimator follows the event-based performance-derivative construction:
for the event bin observed at the decision stage, the derivative of the
window cost w.r.t. each action weight combines exact one-step costs with
Monte-Carlo estimates of the per-building cost to go.  Buildings are treated
as decoupled here; the exchange-limit coupling is handled by the optimizer's
adjustment step, not by the gradient.

`Enumerator` provides the exact counterpart on small instances by expanding
every action sequence of the window against the realized scenario; it is the
oracle the sampled estimator and the assembled derivative are tested against.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .events import N_BINS
from .policy import PolicyTable, action_probabilities, charge_count
from .scenario import MicrogridConfig, Scenario
from .simulate import (
    GridState,
    WindowOutputs,
    build_window_inputs,
    run_window,
    stage_events,
    true_step,
)
from .dynamics import building_stage

SOC_QUANT = 0.05  # signature resolution for storage SOC
WIND_QUANT = 10.0  # kW, signature resolution for wind


def signature(bin_: int, n_m: int, n_c: int, soc: float, wind: float) -> tuple:
    """Hashable state signature used to pool sample paths."""
    return (int(bin_), int(n_m), int(n_c), int(round(soc / SOC_QUANT)), int(round(wind / WIND_QUANT)))


def estimate_event_stats(bins, n_bins: int = N_BINS) -> np.ndarray:
    """Empirical event-bin distribution over sample paths."""
    bins = np.asarray(bins)
    return np.bincount(bins, minlength=n_bins) / max(len(bins), 1)


def estimate_action_value(tails, acts, m: int):
    """(mean tail cost of paths that chose action m, missing flag)."""
    tails = np.asarray(tails, dtype=float)
    mask = np.asarray(acts) == m
    if not mask.any():
        return 0.0, True
    return float(tails[mask].mean()), False


def selection_gradient(w, q) -> np.ndarray:
    """Derivative of sum_i p_i(w) q_i w.r.t. each weight, p = w / sum(w)."""
    w = np.asarray(w, dtype=float)
    q = np.asarray(q, dtype=float)
    s = float(w.sum())
    return (s * q - float(np.dot(w, q))) / (s * s)


@dataclass
class GradientDiagnostics:
    """Bookkeeping from one per-building gradient estimate."""

    n_paths: int
    bin_counts: np.ndarray
    action_counts: dict = field(default_factory=dict)  # sig -> [M] paths per action
    values: dict = field(default_factory=dict)  # sig -> [M] tail estimates used
    missing: list = field(default_factory=list)  # (sig, action) pairs with no sample


def policy_gradient(weights, alpha, bins, sigs, acts, tails, immediate):
    """Assemble the per-building derivative for one decision stage.

    weights: [N_BINS, M] current cell weights; bins/sigs/acts/tails: per-path
    observations at the decision stage; immediate: sig -> [M] exact one-step
    costs.  Returns (d[N_BINS, M], diagnostics).

    Actions never sampled at a state carry no tail estimate; they are imputed
    with the mean of the observed tails at that state (recorded in
    diagnostics) rather than zero, which would fabricate an implausibly cheap
    cost to go.
    """
    weights = np.asarray(weights, dtype=float)
    n_bins, n_act = weights.shape
    bins = np.asarray(bins)
    acts = np.asarray(acts)
    tails = np.asarray(tails, dtype=float)
    n_paths = len(bins)

    diag = GradientDiagnostics(n_paths=n_paths, bin_counts=np.bincount(bins, minlength=n_bins))
    d = np.zeros((n_bins, n_act))
    order = sorted(set(sigs), key=repr)
    for sig in order:
        in_sig = np.array([s == sig for s in sigs])
        b = int(sig[0])
        beta_e = diag.bin_counts[b] / n_paths
        beta_se = in_sig.sum() / diag.bin_counts[b]
        v = np.zeros(n_act)
        counts = np.zeros(n_act, dtype=int)
        miss = []
        for m in range(n_act):
            val, missing = estimate_action_value(tails[in_sig], acts[in_sig], m)
            if missing:
                miss.append(m)
            else:
                v[m] = val
                counts[m] = int((acts[in_sig] == m).sum())
        if miss:
            observed = counts > 0
            fill = float(v[observed].mean()) if observed.any() else 0.0
            for m in miss:
                v[m] = fill
                diag.missing.append((sig, m))
        q = np.asarray(immediate[sig], dtype=float) + v
        d[b] += beta_e * beta_se * selection_gradient(weights[b], q)
        diag.values[sig] = v
        diag.action_counts[sig] = counts
    return d, diag


def exact_immediate(cfg: MicrogridConfig, scn: Scenario, t0: int, state: GridState, alpha) -> np.ndarray:
    """c(s, alpha_m) per building and action, from the observed stage state."""
    K = cfg.n_buildings
    M = len(alpha)
    wind = scn.true_wind(t0)
    loads = cfg.loads[:, t0 % cfg.n_stages]
    price = cfg.price_at(t0)
    _, _, n_m, n_c = stage_events(cfg, scn, t0, state)
    out = np.zeros((K, M))
    for k in range(1, K + 1):
        for m in range(M):
            count = charge_count(int(n_m[k - 1]), int(n_c[k - 1]), float(alpha[m]))
            _, _, cost, _ = building_stage(
                float(wind[k - 1]),
                float(loads[k - 1]),
                count * cfg.p_charge,
                float(state.soc[k - 1]),
                price,
                kappa=cfg.kappa_cap[k - 1],
                eta_c=cfg.eta_c,
                eta_dc=cfg.eta_dc,
                h_cap=cfg.h_cap,
                dt=cfg.dt,
            )
            out[k - 1, m] = cost
    return out


def rollout(
    cfg: MicrogridConfig,
    scn: Scenario,
    t0: int,
    state: GridState,
    policy: PolicyTable,
    *,
    seed: int,
    iteration: int = 0,
    n_paths: int | None = None,
    kernel=None,
    workers: int = 1,
    true_future: bool = False,
    forced=None,
) -> WindowOutputs:
    """Simulate one window of sample paths under the current policy."""
    inp = build_window_inputs(
        cfg,
        scn,
        t0,
        state,
        policy,
        seed=seed,
        n_paths=n_paths,
        iteration=iteration,
        true_future=true_future,
        forced=forced,
    )
    return run_window(inp, kernel=kernel, workers=workers)


def stage_gradient(cfg: MicrogridConfig, scn: Scenario, t0: int, state: GridState, policy: PolicyTable, out: WindowOutputs):
    """Per-building weight derivatives at stage t0 from window outputs.

    All paths share the observed t0 state, so the event and state-signature
    distributions degenerate to the observed point; the general estimator
    still runs underneath.
    """
    K = cfg.n_buildings
    L = out.cost.shape[0]
    wind = scn.true_wind(t0)
    _, bins, n_m, n_c = stage_events(cfg, scn, t0, state)
    imm = exact_immediate(cfg, scn, t0, state, policy.alpha)
    d = np.zeros((K, N_BINS, policy.weights.shape[-1]))
    diags = []
    for k in range(1, K + 1):
        sig = signature(bins[k - 1], n_m[k - 1], n_c[k - 1], float(state.soc[k - 1]), float(wind[k - 1]))
        dk, diag = policy_gradient(
            policy.weights[k - 1, t0 % cfg.n_stages],
            policy.alpha,
            out.bins[:, 0, k - 1],
            [sig] * L,
            out.act[:, 0, k - 1],
            out.cost[:, 1:, k - 1].sum(axis=1),
            {sig: imm[k - 1]},
        )
        d[k - 1] = dk
        diags.append(diag)
    return d, diags


# ---------------------------------------------------------------------------
# exact enumeration on small instances


class Enumerator:
    """Exact window quantities by expanding every action sequence.

    Conditions on the realized scenario (true wind and arrivals), so the only
    randomness enumerated is the policy's.  Cost grows as (M^K)^Tw; the
    constructor rejects instances beyond ``leaf_budget``.
    """

    def __init__(self, cfg: MicrogridConfig, scn: Scenario, t0: int, state: GridState, policy: PolicyTable, leaf_budget: int = 500_000):
        self.cfg = cfg
        self.scn = scn
        self.t0 = t0
        self.state0 = state.copy()
        self.policy = policy
        m = cfg.n_actions ** cfg.n_buildings
        if m ** cfg.window > leaf_budget:
            raise ValueError(
                f"enumeration tree has {m ** cfg.window} leaves, budget {leaf_budget}"
            )

    def _probs(self, policy: PolicyTable, t: int, bins) -> list:
        return [
            action_probabilities(policy.cell(k, t, int(bins[k - 1])))
            for k in range(1, self.cfg.n_buildings + 1)
        ]

    def _value(self, w: int, state: GridState, policy: PolicyTable) -> np.ndarray:
        """Expected remaining cost per building from window offset w."""
        cfg = self.cfg
        if w >= cfg.window:
            return np.zeros(cfg.n_buildings)
        _, bins, _, _ = stage_events(cfg, self.scn, self.t0 + w, state)
        probs = self._probs(policy, self.t0 + w, bins)
        acc = np.zeros(cfg.n_buildings)
        for joint in itertools.product(range(cfg.n_actions), repeat=cfg.n_buildings):
            prob = 1.0
            for k, m in enumerate(joint):
                prob *= probs[k][m]
            rec, nxt = true_step(
                cfg, self.scn, self.t0 + w, state,
                alphas=[policy.alpha[m] for m in joint], action_idx=list(joint),
            )
            acc += prob * (rec.cost + self._value(w + 1, nxt, policy))
        return acc

    def total_cost(self, policy: PolicyTable | None = None) -> float:
        """Exact expected window cost under the (given) policy."""
        pol = self.policy if policy is None else policy
        return float(self._value(0, self.state0, pol).sum())

    def building_values(self, policy: PolicyTable | None = None) -> np.ndarray:
        pol = self.policy if policy is None else policy
        return self._value(0, self.state0, pol)

    def action_values(self, k: int):
        """Exact (c[M], v[M], bin) for building k at the decision stage."""
        cfg = self.cfg
        _, bins, _, _ = stage_events(cfg, self.scn, self.t0, self.state0)
        c = exact_immediate(cfg, self.scn, self.t0, self.state0, self.policy.alpha)[k - 1]
        probs = self._probs(self.policy, self.t0, bins)
        others = [j for j in range(1, cfg.n_buildings + 1) if j != k]
        v = np.zeros(cfg.n_actions)
        for m in range(cfg.n_actions):
            acc = 0.0
            for rest in itertools.product(range(cfg.n_actions), repeat=len(others)):
                joint = [0] * cfg.n_buildings
                joint[k - 1] = m
                prob = 1.0
                for j, mj in zip(others, rest):
                    joint[j - 1] = mj
                    prob *= probs[j - 1][mj]
                _, nxt = true_step(
                    cfg, self.scn, self.t0, self.state0,
                    alphas=[self.policy.alpha[i] for i in joint],
                )
                acc += prob * self._value(1, nxt, self.policy)[k - 1]
            v[m] = acc
        return c, v, int(bins[k - 1])

    def gradient(self, k: int):
        """Exact derivative of building k's window cost w.r.t. its t0 cell."""
        c, v, b = self.action_values(k)
        w = self.policy.cell(k, self.t0, b)
        d = np.zeros((N_BINS, self.cfg.n_actions))
        d[b] = selection_gradient(w, c + v)
        return d, b

    def best_fixed_actions(self):
        """Cheapest deterministic action assignment (perfect information)."""
        cfg = self.cfg

        def rec(w, state):
            if w >= cfg.window:
                return 0.0, []
            best_cost, best_seq = np.inf, None
            for joint in itertools.product(range(cfg.n_actions), repeat=cfg.n_buildings):
                r, nxt = true_step(
                    cfg, self.scn, self.t0 + w, state,
                    alphas=[self.policy.alpha[m] for m in joint],
                )
                sub, seq = rec(w + 1, nxt)
                tot = r.total_cost + sub
                if tot < best_cost:
                    best_cost, best_seq = tot, [joint] + seq
            return best_cost, best_seq

        cost, seq = rec(0, self.state0)
        return cost, np.asarray(seq, dtype=int)


def performance_difference_check(cfg, scn, t0, state, pol_sigma, pol_nu, leaf_budget=500_000):
    """(lhs, rhs) of the window performance-difference identity.

    lhs is J(sigma) - J(nu) computed directly; rhs re-derives it stage by
    stage as the sigma-trajectory expectation of the policy-probability
    change times the nu cost to go.  Both sides agree to numerical precision
    when the value machinery is correct.
    """
    en_sigma = Enumerator(cfg, scn, t0, state, pol_sigma, leaf_budget)
    en_nu = Enumerator(cfg, scn, t0, state, pol_nu, leaf_budget)
    lhs = en_sigma.total_cost() - en_nu.total_cost()

    K, M = cfg.n_buildings, cfg.n_actions

    def rec(w, st, reach):
        if w >= cfg.window or reach == 0.0:
            return 0.0
        _, bins, _, _ = stage_events(cfg, scn, t0 + w, st)
        ps = en_sigma._probs(pol_sigma, t0 + w, bins)
        pn = en_nu._probs(pol_nu, t0 + w, bins)
        total = 0.0
        for joint in itertools.product(range(M), repeat=K):
            prob_s = 1.0
            prob_n = 1.0
            for k, m in enumerate(joint):
                prob_s *= ps[k][m]
                prob_n *= pn[k][m]
            rec_stage, nxt = true_step(
                cfg, scn, t0 + w, st, alphas=[pol_sigma.alpha[m] for m in joint]
            )
            q_nu = rec_stage.total_cost + float(en_nu._value(w + 1, nxt, pol_nu).sum())
            total += reach * (prob_s - prob_n) * q_nu
            total += rec(w + 1, nxt, reach * prob_s)
        return total

    rhs = rec(0, state, 1.0)
    return lhs, rhs
