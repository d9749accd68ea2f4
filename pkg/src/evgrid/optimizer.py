"""Per-stage constrained policy optimization.

Each decision stage runs a Monte-Carlo gradient loop; whenever the expected
microgrid exchange at the stage leaves [g_lo, g_hi], the violation is
converted into per-building charge-ratio targets and the affected weight
cells are projected onto the target hyperplane inside the [w_min, 1] box.
A final pass enforces feasibility of the greedy (deployed) actions, since
the expectation check alone can leave the argmax action violating.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import N_BINS
from .gradient import rollout, stage_gradient
from .policy import W_MIN, PolicyTable, action_probabilities, greedy_action
from .scenario import MicrogridConfig, Scenario
from .simulate import GridState, WindowOutputs, true_step


class AdjustmentInfeasible(RuntimeError):
    """No building has deferrable EVs to absorb the exchange adjustment."""


@dataclass
class AdjustTarget:
    """Charge-ratio correction for one building."""

    k: int
    current_ratio: float
    delta_ratio: float
    direction: str  # "reduce" | "increase"

    @property
    def target(self) -> float:
        return self.current_ratio + self.delta_ratio


@dataclass
class ProjectionInfo:
    achieved_ratio: float
    clamped: bool
    kkt_residual: float


@dataclass
class IterationLog:
    stage: int
    iteration: int
    step: float
    grad_norms: np.ndarray  # per building
    grad_norm: float
    exchange_kw: float
    violation_kw: float
    adjusted: bool = False
    converged_by: str | None = None


@dataclass
class OptimizeResult:
    table: PolicyTable
    logs: list
    converged_by: str
    infeasible: bool = False
    greedy_rounds: int = 0
    final_exchange: float = 0.0


def step_size(j: int, xi: float) -> float:
    """Diminishing update step, 1 at j = 0."""
    return 1.0 / (1.0 + xi * j)


def gradient_step(table: PolicyTable, d: np.ndarray, j: int, t0: int, *, xi: float) -> PolicyTable:
    """w <- clip(w - delta_j d) on the stage-t0 cells; d is zero elsewhere."""
    delta = step_size(j, xi)
    col = t0 % table.weights.shape[1]
    table.weights[:, col] = np.clip(table.weights[:, col] - delta * d, W_MIN, 1.0)
    return table


def exchange_violation(g: float, cfg: MicrogridConfig) -> float:
    """Signed kW excess over [g_lo, g_hi]; 0 inside the band."""
    return max(g - cfg.g_hi, 0.0) - max(cfg.g_lo - g, 0.0)


def expected_exchange(out: WindowOutputs, cfg: MicrogridConfig):
    """(mean stage-t0 exchange over paths, signed violation)."""
    g = float(out.g[:, 0, :].sum(axis=1).mean())
    return g, exchange_violation(g, cfg)


def greedy_exchange(cfg: MicrogridConfig, scn: Scenario, t0: int, state: GridState, table: PolicyTable):
    """(exchange, violation, stage record) for the greedy actions at t0."""
    from .simulate import stage_events

    _, bins, _, _ = stage_events(cfg, scn, t0, state)
    acts = [greedy_action(table.cell(k, t0, int(bins[k - 1]))) for k in range(1, cfg.n_buildings + 1)]
    rec, _ = true_step(cfg, scn, t0, state, alphas=[table.alpha[m] for m in acts], action_idx=acts)
    g = rec.total_g
    return g, exchange_violation(g, cfg), rec


def allocate_adjustment(delta_kw, d_norms, n_m, n_c, ratios, *, p_charge) -> list:
    """Split an exchange violation into per-building ratio corrections.

    Reduction (delta_kw > 0) is allocated proportionally to the marginal-cost
    magnitudes |d_k|; increase inverts the shares so cheap-to-move buildings
    absorb more.  Buildings without deferrable EVs (n_c == n_m) get zero and
    their share moves to the others.
    """
    n_m = np.asarray(n_m, dtype=int)
    n_c = np.asarray(n_c, dtype=int)
    d_norms = np.asarray(d_norms, dtype=float)
    elastic = n_c > n_m
    if not elastic.any():
        raise AdjustmentInfeasible("every building is all-must-charge at this stage")

    raw = np.where(elastic, d_norms, 0.0)
    if raw.sum() > 0.0:
        share = raw / raw.sum()
    else:
        share = elastic / elastic.sum()
    if delta_kw < 0:
        inv = np.where(elastic, 1.0 - share, 0.0)
        share = inv / inv.sum() if inv.sum() > 0.0 else elastic / elastic.sum()

    count_total = abs(delta_kw) / p_charge
    sign = -1.0 if delta_kw > 0 else 1.0
    out = []
    for k in range(len(n_m)):
        if not elastic[k]:
            out.append(AdjustTarget(k + 1, float(ratios[k]), 0.0, "reduce" if delta_kw > 0 else "increase"))
            continue
        dr = sign * share[k] * count_total / (n_c[k] - n_m[k])
        tgt = min(max(float(ratios[k]) + dr, 0.0), 1.0)
        out.append(
            AdjustTarget(
                k + 1,
                float(ratios[k]),
                tgt - float(ratios[k]),
                "reduce" if delta_kw > 0 else "increase",
            )
        )
    return out


def _ratio_bounds(alpha, s, w_min):
    """Attainable expected-ratio range given sum(w') = s and the box."""
    m = len(alpha)
    lo_w = np.full(m, w_min)
    spare = s - m * w_min
    for i in np.argsort(alpha, kind="stable"):  # fill cheap ratios first
        take = min(spare, 1.0 - w_min)
        lo_w[i] += take
        spare -= take
    hi_w = np.full(m, w_min)
    spare = s - m * w_min
    for i in np.argsort(-alpha, kind="stable"):
        take = min(spare, 1.0 - w_min)
        hi_w[i] += take
        spare -= take
    return float(np.dot(alpha, lo_w) / s), float(np.dot(alpha, hi_w) / s), lo_w, hi_w


def project_weights(w, alpha, target_ratio, *, w_min=W_MIN):
    """Nearest weights (L2) with the given expected charge ratio.

    Solves argmin ||w' - w||^2 subject to sum(w') = sum(w),
    dot(alpha, w')/sum(w') = target_ratio and w' in [w_min, 1].  The KKT
    solution is w'_m = clip(w_m + lam + mu alpha_m); both multipliers are
    found by nested bisection (each constraint residual is monotone in its
    multiplier).  Unreachable targets are clamped to the attainable boundary
    and flagged.
    """
    w = np.asarray(w, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    s = float(w.sum())
    m = len(w)

    lo_r, hi_r, lo_w, hi_w = _ratio_bounds(alpha, s, w_min)
    tgt = float(target_ratio)
    if tgt <= lo_r:
        # extreme fill is the unique feasible point at the boundary ratio
        feas = abs(float(lo_w.sum()) - s) + abs(float(np.dot(alpha, lo_w)) - lo_r * s)
        return lo_w, ProjectionInfo(lo_r, tgt < lo_r - 1e-12, feas)
    if tgt >= hi_r:
        feas = abs(float(hi_w.sum()) - s) + abs(float(np.dot(alpha, hi_w)) - hi_r * s)
        return hi_w, ProjectionInfo(hi_r, tgt > hi_r + 1e-12, feas)

    def solve_lam(mu):
        base = w + mu * alpha
        lo = w_min - float(base.max())
        hi = 1.0 - float(base.min())
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if np.clip(base + mid, w_min, 1.0).sum() < s:
                lo = mid
            else:
                hi = mid
        lam = 0.5 * (lo + hi)
        return lam, np.clip(base + lam, w_min, 1.0)

    def ratio_err(mu):
        _, cand = solve_lam(mu)
        return float(np.dot(alpha, cand)) - tgt * s, cand

    span = float(alpha.max() - alpha.min())
    b = (abs(s) + m) / max(span, 1e-12)
    lo_mu, hi_mu = -b, b
    err_lo, _ = ratio_err(lo_mu)
    err_hi, _ = ratio_err(hi_mu)
    grow = 0
    while err_lo > 0.0 and grow < 60:
        lo_mu *= 2.0
        err_lo, _ = ratio_err(lo_mu)
        grow += 1
    while err_hi < 0.0 and grow < 120:
        hi_mu *= 2.0
        err_hi, _ = ratio_err(hi_mu)
        grow += 1
    for _ in range(100):
        mid = 0.5 * (lo_mu + hi_mu)
        err, _ = ratio_err(mid)
        if err < 0.0:
            lo_mu = mid
        else:
            hi_mu = mid
    mu = 0.5 * (lo_mu + hi_mu)
    lam, out = solve_lam(mu)
    achieved = float(np.dot(alpha, out) / out.sum())
    return out, ProjectionInfo(achieved, False, _kkt_residual(out, w, alpha, lam, mu, s, tgt, w_min))


def _kkt_residual(out, w, alpha, lam, mu, s, tgt, w_min):
    """Max violation of the projection optimality system at (lam, mu)."""
    res = max(abs(float(out.sum()) - s), abs(float(np.dot(alpha, out)) - tgt * s))
    pred = w + lam + mu * alpha
    for i in range(len(out)):
        if out[i] <= w_min + 1e-12:
            res = max(res, pred[i] - w_min)  # multiplier must push below the box
        elif out[i] >= 1.0 - 1e-12:
            res = max(res, 1.0 - pred[i])
        else:
            res = max(res, abs(out[i] - pred[i]))
    return res


def observed_cells(cfg: MicrogridConfig, scn: Scenario, t0: int, state: GridState):
    """(bins, n_m, n_c) at the decision stage."""
    from .simulate import stage_events

    _, bins, n_m, n_c = stage_events(cfg, scn, t0, state)
    return bins, n_m, n_c


def _apply_targets(table: PolicyTable, t0: int, bins, targets) -> None:
    for tg in targets:
        if tg.delta_ratio == 0.0:
            continue
        cell = table.cell(tg.k, t0, int(bins[tg.k - 1]))
        out, _ = project_weights(cell, table.alpha, tg.target)
        table.weights[tg.k - 1, t0 % table.weights.shape[1], int(bins[tg.k - 1])] = out


def _cell_ratios(table: PolicyTable, t0: int, bins, n_buildings: int) -> np.ndarray:
    r = np.zeros(n_buildings)
    for k in range(1, n_buildings + 1):
        p = action_probabilities(table.cell(k, t0, int(bins[k - 1])))
        r[k - 1] = float(np.dot(p, table.alpha))
    return r


def optimize_stage(
    cfg: MicrogridConfig,
    scn: Scenario,
    t0: int,
    state: GridState,
    table: PolicyTable,
    *,
    seed: int,
    kernel=None,
    workers: int = 1,
    greedy_pass_rounds: int = 20,
) -> OptimizeResult:
    """Gradient/adjustment loop for one decision stage (updates the table).

    Iterates: sample a window, estimate per-building derivatives, then either
    correct an exchange violation (project the observed cells and resample)
    or take a diminishing gradient step.  Stops on small gradient norm, on a
    stalled gradient, or at the iteration cap.  A greedy feasibility pass
    follows, because the deployed action is the argmax, not the expectation.
    """
    logs: list = []
    prev_d = None
    last_norms = np.zeros(cfg.n_buildings)
    converged = "max-iter"

    for j in range(cfg.max_iter):
        out = rollout(
            cfg, scn, t0, state, table,
            seed=seed, iteration=j, kernel=kernel, workers=workers,
        )
        d, _ = stage_gradient(cfg, scn, t0, state, table, out)
        norms = np.linalg.norm(d.reshape(cfg.n_buildings, -1), axis=1)
        dn = float(np.linalg.norm(d))
        last_norms = norms
        g, viol = expected_exchange(out, cfg)
        log = IterationLog(
            stage=t0, iteration=j, step=step_size(j, cfg.xi),
            grad_norms=norms, grad_norm=dn, exchange_kw=g, violation_kw=viol,
        )
        logs.append(log)

        if viol != 0.0:
            bins, n_m, n_c = observed_cells(cfg, scn, t0, state)
            ratios = _cell_ratios(table, t0, bins, cfg.n_buildings)
            try:
                targets = allocate_adjustment(
                    viol, norms, n_m, n_c, ratios, p_charge=cfg.p_charge
                )
            except AdjustmentInfeasible:
                log.converged_by = "infeasible"
                return OptimizeResult(table, logs, "infeasible", infeasible=True, final_exchange=g)
            _apply_targets(table, t0, bins, targets)
            log.adjusted = True
            continue

        if dn <= cfg.eps_stop:
            log.converged_by = converged = "norm"
            break
        if prev_d is not None and float(np.linalg.norm(d - prev_d)) <= cfg.eps_stop:
            log.converged_by = converged = "stall"
            break
        gradient_step(table, d, j, t0, xi=cfg.xi)
        prev_d = d

    if logs and logs[-1].converged_by is None:
        logs[-1].converged_by = converged

    # greedy feasibility pass: the deployed action is the argmax of each
    # observed cell, which the expectation check above does not pin down
    infeasible = False
    rounds = 0
    g_final = logs[-1].exchange_kw if logs else 0.0
    for rounds in range(greedy_pass_rounds + 1):
        g_final, viol, rec = greedy_exchange(cfg, scn, t0, state, table)
        if viol == 0.0:
            break
        floor_alpha = 0.0 if viol > 0 else 1.0
        rec0, _ = true_step(cfg, scn, t0, state, alphas=[floor_alpha] * cfg.n_buildings)
        if exchange_violation(rec0.total_g, cfg) != 0.0 and np.sign(
            exchange_violation(rec0.total_g, cfg)
        ) == np.sign(viol):
            infeasible = True
            break
        ratios = _cell_ratios(table, t0, rec.bin, cfg.n_buildings)
        try:
            targets = allocate_adjustment(
                viol, last_norms, rec.n_m, rec.n_c, ratios, p_charge=cfg.p_charge
            )
        except AdjustmentInfeasible:
            infeasible = True
            break
        _apply_targets(table, t0, rec.bin, targets)
    else:
        infeasible = True

    return OptimizeResult(
        table,
        logs,
        converged,
        infeasible=infeasible,
        greedy_rounds=rounds,
        final_exchange=g_final,
    )
