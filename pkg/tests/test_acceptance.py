"""Acceptance gate: nine numbered criteria, one verdict line each.

Criteria 1-4 check the estimators against independent oracles (enumeration,
finite differences, a dense grid laid on the exact constraint set).  Criteria
5-7 run the full three-building day over ten master seeds and check cost
ordering, transmission safety, and iteration budgets.  Criterion 8 is a
randomized-invariant sweep of one million cases per property family, and
criterion 9 pins byte-level determinism across worker counts.
"""
import itertools
import time

import numpy as np
import pytest

from evgrid.dynamics import building_stage, one_step_cost
from evgrid.gradient import Enumerator, selection_gradient
from evgrid.harness import run_event_based, run_ideal, run_rule_based, write_trace_csv
from evgrid.optimizer import _ratio_bounds, optimize_stage, project_weights
from evgrid.policy import (
    PolicyTable,
    W_MIN,
    action_probabilities,
    charge_count,
    greedy_action,
    mllp_select,
)
from evgrid.scenario import Scenario, config_from_dict, default_config
from evgrid.simulate import initial_state, stage_events, true_step

from conftest import tiny_raw

# pinned tolerances and budgets, one per criterion
GRAD_REL_TOL = 1e-6          # 1: enumerated gradient vs central differences
GRAD_WALL_S = 5.0
SEL_ABS_TOL = 1e-8           # 2: selection gradient vs probability differences
SEL_WALL_S = 1.0
PROJ_COORD_TOL = 1e-3        # 3: projection vs dense grid, per coordinate
PROJ_KKT_TOL = 1e-9
PROJ_RATIO_TOL = 1e-9
PROJ_WALL_S = 10.0
OPT_COST_TOL = 1e-6          # 4: stage optimizer vs exhaustive enumeration
OPT_WALL_S = 60.0
MIN_REDUCTION = 0.05         # 5: event-based saving vs rule-based
SEED_WALL_S = 1800.0
MAX_MEAN_ITERS = 50.0        # 7: stage-loop iteration budget
N_PROPERTY_CASES = 1_000_000  # 8: cases per property family
SWEEP_SEEDS = range(1, 11)


def _verdict(num: int, name: str, ok: bool, detail: str) -> None:
    print(f"[criterion {num}] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {num}: {detail}"


@pytest.fixture(scope="module")
def tiny():
    cfg = config_from_dict(tiny_raw())
    scn = Scenario(cfg, 0)
    return cfg, scn, initial_state(scn)


@pytest.fixture(scope="module")
def sweep():
    """Ten full days per policy on the three-building scenario."""
    cfg = default_config()
    runs = []
    for seed in SWEEP_SEEDS:
        t0 = time.perf_counter()
        rule = run_rule_based(cfg, seed)
        event, _ = run_event_based(cfg, seed, workers=4)
        ideal = run_ideal(cfg, seed)
        runs.append(
            {
                "seed": seed,
                "rule": rule,
                "event": event,
                "ideal": ideal,
                "wall": time.perf_counter() - t0,
            }
        )
    return cfg, runs


def test_criterion_1_gradient_matches_finite_differences(tiny):
    cfg, scn, state = tiny
    t_start = time.perf_counter()
    gen = np.random.default_rng(1)
    h = 1e-5
    worst = 0.0
    for _ in range(20):
        table = PolicyTable.uniform(cfg.n_buildings, cfg.n_stages, cfg.n_actions)
        table.weights[:] = gen.uniform(0.05, 1.0, table.weights.shape)
        d, b = Enumerator(cfg, scn, 0, state, table).gradient(1)
        for m in range(cfg.n_actions):
            pert = table.copy()
            pert.weights[0, 0, b, m] += h
            up = Enumerator(cfg, scn, 0, state, pert).total_cost()
            pert.weights[0, 0, b, m] -= 2 * h
            dn = Enumerator(cfg, scn, 0, state, pert).total_cost()
            fd = (up - dn) / (2 * h)
            worst = max(worst, abs(d[b, m] - fd) / max(abs(fd), 1e-12))
    wall = time.perf_counter() - t_start
    _verdict(
        1,
        "policy gradient vs central differences",
        worst < GRAD_REL_TOL and wall < GRAD_WALL_S,
        f"max rel err {worst:.2e}, {wall:.2f} s",
    )


def test_criterion_2_selection_gradient_identity():
    t_start = time.perf_counter()
    gen = np.random.default_rng(2024)
    h = 2e-6
    worst = 0.0
    for _ in range(1000):
        m = int(gen.integers(2, 12))
        w = gen.uniform(0.1, 1.0, m)
        q = gen.uniform(-1.0, 1.0, m)
        d = selection_gradient(w, q)
        for i in range(m):
            wp, wm = w.copy(), w.copy()
            wp[i] += h
            wm[i] -= h
            fd = (action_probabilities(wp) @ q - action_probabilities(wm) @ q) / (2 * h)
            worst = max(worst, abs(d[i] - fd))
    wall = time.perf_counter() - t_start
    _verdict(
        2,
        "selection gradient vs probability differences",
        worst < SEL_ABS_TOL and wall < SEL_WALL_S,
        f"max abs err {worst:.2e} on 1000 vectors, {wall:.2f} s",
    )


def _face_candidates(w0, alpha, s_free, dot_free, free, pinned_w, step):
    """Lattice candidates on one box face (pinned coordinates at a bound)."""
    nf = len(free)
    out = []
    if nf == 0:
        return out
    if nf == 1:
        wi = s_free
        if W_MIN - 1e-12 <= wi <= 1.0 + 1e-12 and abs(alpha[free[0]] * wi - dot_free) <= 1e-9:
            cand = pinned_w.copy()
            cand[free[0]] = wi
            out.append(cand[:, None])
        return out
    af = alpha[free]
    if nf == 2:
        det = af[1] - af[0]
        if abs(det) < 1e-12:
            return out
        w2 = (dot_free - af[0] * s_free) / det
        w1 = s_free - w2
        if min(w1, w2) >= W_MIN - 1e-12 and max(w1, w2) <= 1.0 + 1e-12:
            cand = pinned_w.copy()
            cand[free[0]] = w1
            cand[free[1]] = w2
            out.append(cand[:, None])
        return out
    # nf >= 3: lattice over an orthonormal tangent basis of the face's plane,
    # anchored at a feasible point; exact constraints, box filtered after
    if s_free <= nf * W_MIN - 1e-12 or s_free >= nf * 1.0 + 1e-12:
        return out
    lo_r, hi_r, lo_w, hi_w = _ratio_bounds(af, s_free, W_MIN)
    r_need = dot_free / s_free
    if not (lo_r - 1e-12 <= r_need <= hi_r + 1e-12):
        return out
    th = 0.0 if hi_r == lo_r else (r_need - lo_r) / (hi_r - lo_r)
    c = lo_w + th * (hi_w - lo_w)
    basis = np.vstack([np.ones(nf), af])
    _, _, vt = np.linalg.svd(basis)
    u = vt[2:].T
    z0 = u.T @ (np.asarray(w0)[free] - c)
    # the grid optimum lies within ||z0|| of the anchor, plus lattice slack
    r = float(np.linalg.norm(z0)) + 2 * step * np.sqrt(nf - 2)
    axes = [np.arange(z - r, z + r + step / 2, step) for z in z0]
    mesh = np.meshgrid(*axes, indexing="ij")
    z = np.stack([g.ravel() for g in mesh])
    wf = c[:, None] + u @ z
    ok = np.all((wf >= W_MIN - 1e-12) & (wf <= 1.0 + 1e-12), axis=0)
    wf = wf[:, ok]
    if wf.shape[1] == 0:
        return out
    cand = np.tile(pinned_w[:, None], (1, wf.shape[1]))
    cand[free] = wf
    out.append(cand)
    return out


def dense_grid_projection(w0, alpha, tgt, step=1e-3):
    """Brute-force nearest feasible point on a step-lattice, faces included."""
    w0 = np.asarray(w0, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    m = len(w0)
    s = float(w0.sum())
    best, best_d = None, np.inf
    for pattern in itertools.product((0, 1, 2), repeat=m):
        free = [i for i in range(m) if pattern[i] == 0]
        pinned_w = np.array(
            [0.0 if p == 0 else (W_MIN if p == 1 else 1.0) for p in pattern]
        )
        s_free = s - pinned_w.sum()
        dot_free = tgt * s - float(alpha @ pinned_w)
        for cand in _face_candidates(w0, alpha, s_free, dot_free, free, pinned_w, step):
            dist = ((cand - w0[:, None]) ** 2).sum(axis=0)
            i = int(np.argmin(dist))
            if dist[i] < best_d:
                best_d, best = dist[i], cand[:, i]
    return best


def test_criterion_3_projection_matches_dense_grid():
    t_start = time.perf_counter()
    gen = np.random.default_rng(77)
    worst_coord = worst_kkt = worst_ratio = 0.0
    for _ in range(100):
        m = int(gen.integers(2, 5))
        alpha = np.arange(m) / (m - 1)
        w0 = gen.uniform(W_MIN, 1.0, m)
        lo_r, hi_r, _, _ = _ratio_bounds(alpha, float(w0.sum()), W_MIN)
        tgt = float(gen.uniform(lo_r + 0.02, hi_r - 0.02))
        proj, info = project_weights(w0, alpha, tgt)
        best = dense_grid_projection(w0, alpha, tgt)
        worst_coord = max(worst_coord, float(np.max(np.abs(proj - best))))
        worst_kkt = max(worst_kkt, info.kkt_residual)
        worst_ratio = max(
            worst_ratio, abs(float(np.dot(alpha, proj)) - tgt * float(proj.sum()))
        )
    wall = time.perf_counter() - t_start
    _verdict(
        3,
        "projection vs dense grid",
        worst_coord < PROJ_COORD_TOL
        and worst_kkt < PROJ_KKT_TOL
        and worst_ratio < PROJ_RATIO_TOL
        and wall < PROJ_WALL_S,
        f"coord {worst_coord:.2e}, kkt {worst_kkt:.1e}, ratio {worst_ratio:.1e}, {wall:.2f} s",
    )


def test_criterion_4_stage_optimizer_reaches_enumerated_optimum(tiny):
    cfg, scn, state = tiny
    t_start = time.perf_counter()
    table = PolicyTable.uniform(cfg.n_buildings, cfg.n_stages, cfg.n_actions)
    best_cost, _ = Enumerator(cfg, scn, 0, state, table).best_fixed_actions()
    st = state
    total = 0.0
    for t in range(cfg.n_stages):
        optimize_stage(cfg, scn, t, st, table, seed=0)
        _, bins, _, _ = stage_events(cfg, scn, t, st)
        acts = [
            greedy_action(table.cell(k, t, int(bins[k - 1])))
            for k in range(1, cfg.n_buildings + 1)
        ]
        rec, st = true_step(
            cfg, scn, t, st, alphas=[table.alpha[a] for a in acts], action_idx=acts
        )
        total += rec.total_cost
    wall = time.perf_counter() - t_start
    gap = abs(total - best_cost)
    _verdict(
        4,
        "greedy deployment vs exhaustive enumeration",
        gap < OPT_COST_TOL and wall < OPT_WALL_S,
        f"cost gap {gap:.2e} RMB, {wall:.2f} s",
    )


def test_criterion_5_full_scenario_cost_ordering(sweep):
    cfg, runs = sweep
    rule = np.array([r["rule"].total_cost for r in runs])
    event = np.array([r["event"].total_cost for r in runs])
    ideal = np.array([r["ideal"].total_cost for r in runs])
    reduction = (rule.mean() - event.mean()) / rule.mean()
    slowest = max(r["wall"] for r in runs)
    _verdict(
        5,
        "event-based beats rule-based, bounded by the heuristic",
        reduction >= MIN_REDUCTION
        and ideal.mean() <= event.mean()
        and slowest < SEED_WALL_S,
        f"mean costs rule {rule.mean():.1f} / event {event.mean():.1f} / "
        f"heuristic {ideal.mean():.1f} RMB, reduction {100 * reduction:.2f}%, "
        f"slowest seed {slowest:.0f} s",
    )


def test_criterion_6_transmission_safety(sweep):
    cfg, runs = sweep
    event_ok = all(
        set(r["event"].violation_stages(cfg)) <= set(r["event"].infeasible_stages)
        for r in runs
    )
    rule_violations = [len(r["rule"].violation_stages(cfg)) for r in runs]
    _verdict(
        6,
        "event policy respects the exchange band",
        event_ok and all(n >= 1 for n in rule_violations),
        f"event unflagged violations 0 in {len(runs)} seeds, "
        f"rule violations/seed {rule_violations}",
    )


def test_criterion_7_iteration_budget(sweep):
    _, runs = sweep
    iters = np.concatenate(
        [[s["iterations"] for s in r["event"].stage_summaries] for r in runs]
    )
    _verdict(
        7,
        "stage-loop iteration budget",
        float(iters.mean()) <= MAX_MEAN_ITERS,
        f"mean {iters.mean():.1f}, max {iters.max()} over {iters.size} stages",
    )


def test_criterion_8_invariant_suites():
    t_start = time.perf_counter()
    gen = np.random.default_rng(8)
    n = N_PROPERTY_CASES

    wind = gen.uniform(0.0, 1500.0, n)
    load = gen.uniform(0.0, 3000.0, n)
    p_ev = gen.uniform(0.0, 720.0, n)
    soc = gen.uniform(0.0, 1.0, n)
    price = gen.uniform(0.3, 0.9, n)
    worst_balance = 0.0
    worst_cost = 0.0
    soc_ok = True
    for i in range(n):
        h, g, cost, soc1 = building_stage(
            wind[i], load[i], p_ev[i], soc[i], price[i],
            kappa=166.65, eta_c=0.82, eta_dc=0.62, h_cap=50.0, dt=0.5,
        )
        soc_ok &= 0.0 <= soc1 <= 1.0
        worst_balance = max(worst_balance, abs(load[i] + p_ev[i] - wind[i] - h - g))
        ref = one_step_cost(
            wind[i], load[i], p_ev[i], soc[i], price[i],
            kappa=166.65, eta_c=0.82, eta_dc=0.62, h_cap=50.0, dt=0.5,
        )
        worst_cost = max(worst_cost, abs(cost - price[i] * 0.5 * g), abs(cost - ref))
    dynamics_ok = soc_ok and worst_balance <= 1e-9 and worst_cost <= 1e-9

    n_c = gen.integers(0, 201, n)
    n_m = (gen.uniform(0.0, 1.0, n) * (n_c + 1)).astype(int)
    a_lo = gen.uniform(0.0, 1.0, n)
    a_hi = np.minimum(1.0, a_lo + gen.uniform(0.0, 1.0, n))
    count_ok = True
    for i in range(n):
        lo = charge_count(int(n_m[i]), int(n_c[i]), float(a_lo[i]))
        hi = charge_count(int(n_m[i]), int(n_c[i]), float(a_hi[i]))
        count_ok &= n_m[i] <= lo <= hi <= n_c[i]

    mllp_ok = True
    for _ in range(N_PROPERTY_CASES // 50):
        m = 50
        ids = gen.permutation(10 * m)[:m]
        trem = np.round(gen.uniform(0.5, 24.0, m), 1)
        erem = np.round(gen.uniform(0.0, 30.0, m), 1)
        count = int(gen.integers(0, m + 1))
        base = mllp_select(ids, trem, erem, count, proc_rate=3.312)
        perm = gen.permutation(m)
        again = mllp_select(ids[perm], trem[perm], erem[perm], count, proc_rate=3.312)
        mllp_ok &= base == again

    wall = time.perf_counter() - t_start
    _verdict(
        8,
        "invariant suites (1e6 cases per family)",
        dynamics_ok and count_ok and mllp_ok,
        f"balance {worst_balance:.1e} kW, cost id {worst_cost:.1e} RMB, "
        f"count monotone {count_ok}, dispatch order stable {mllp_ok}, {wall:.0f} s",
    )


def test_criterion_9_trace_bytes_identical_across_workers(tmp_path):
    cfg = default_config()
    blobs = []
    for workers in (1, 3):
        report, _ = run_event_based(cfg, 1, workers=workers)
        path = tmp_path / f"trace_w{workers}.csv"
        write_trace_csv(path, cfg, report)
        blobs.append(path.read_bytes())
    _verdict(
        9,
        "trace bytes invariant to worker count",
        blobs[0] == blobs[1],
        f"{len(blobs[0])} bytes, workers 1 vs 3",
    )
