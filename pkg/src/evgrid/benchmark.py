"""Timing comparison of the rollout kernels.

Runs identical window batches through the pure-python reference and the
compiled kernel, checks the outputs agree bit for bit, and reports wall
times.  Used by `evgrid bench` and the backend parity tests.
"""
from __future__ import annotations

import time

import numpy as np

from .policy import PolicyTable
from .scenario import Scenario, default_config, load_config
from .simulate import (
    HAVE_EXTENSION,
    build_window_inputs,
    get_kernel,
    initial_state,
    run_window,
    true_step,
)


def _outputs_equal(a, b) -> bool:
    return all(
        np.array_equal(getattr(a, f), getattr(b, f))
        for f in ("cost", "g", "bins", "act", "n_m", "n_c")
    )


def run_benchmark(config=None, seed: int = 0, n_paths: int = 50, n_stages: int = 8) -> str:
    cfg = load_config(config) if config else default_config()
    scn = Scenario(cfg, seed)
    policy = PolicyTable.uniform(cfg.n_buildings, cfg.n_stages, cfg.n_actions)
    state = initial_state(scn)

    # the same batch of stage-0.. windows for both backends
    stages = []
    for t0 in range(min(n_stages, cfg.n_stages)):
        stages.append(
            build_window_inputs(
                cfg, scn, t0, state, policy, seed=seed, n_paths=n_paths
            )
        )
        rec, state = true_step(cfg, scn, t0, state, alphas=[1.0] * cfg.n_buildings)

    timings = {}
    outputs = {}
    names = ["python"] + (["cython"] if HAVE_EXTENSION else [])
    for name in names:
        kernel = get_kernel(name)
        t_start = time.perf_counter()
        outputs[name] = [run_window(inp, kernel=kernel) for inp in stages]
        timings[name] = time.perf_counter() - t_start

    lines = [
        f"rollout benchmark: {len(stages)} windows x {n_paths} paths x "
        f"{cfg.window} stages x {cfg.n_buildings} buildings, {cfg.n_evs} EVs"
    ]
    for name in names:
        per = timings[name] / len(stages)
        lines.append(f"  {name:<8} {timings[name]:8.3f} s total  {per * 1e3:8.1f} ms/window")
    if HAVE_EXTENSION:
        same = all(
            _outputs_equal(a, b) for a, b in zip(outputs["python"], outputs["cython"])
        )
        lines.append(f"  speedup  {timings['python'] / timings['cython']:8.1f}x")
        lines.append(f"  outputs bit-identical: {same}")
        if not same:
            raise AssertionError("kernel outputs diverged; see benchmark inputs")
    else:
        lines.append("  compiled kernel unavailable (pure-python build)")
    return "\n".join(lines)
