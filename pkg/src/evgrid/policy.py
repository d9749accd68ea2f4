"""Randomized charging policy: weight tables over discrete charge ratios.

A policy holds one positive weight per (building, stage, event bin, action);
the probability of picking action m is w_m / sum(w).  Weights live in
[W_MIN, 1] and are only normalized at selection time.  The charge ratio
alpha in [0, 1] interpolates between charging only the must-charge EVs
(alpha=0) and all chargeable EVs (alpha=1); the EVs actually plugged in are
chosen by modified least-laxity-longest-processing order.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .events import N_BINS

W_MIN = 1e-6
CKPT_FORMAT = "evgrid-policy"
CKPT_VERSION = 1


def action_grid(n_actions: int) -> np.ndarray:
    """Charge ratios {i/(M-1)}: 0, 0.1, ..., 1.0 for the default M=11."""
    return np.arange(n_actions) / (n_actions - 1)


def weight_sum(w) -> float:
    """Sequential sum; the compiled kernel accumulates in the same order."""
    s = 0.0
    for x in w:
        s += x
    return s


def action_probabilities(w) -> np.ndarray:
    s = weight_sum(w)
    return np.asarray([x / s for x in w])


def sample_action(w, u: float) -> int:
    """Index drawn from the normalized weights using one uniform u in [0,1)."""
    s = weight_sum(w)
    thr = u * s
    acc = 0.0
    for m in range(len(w)):
        acc += w[m]
        if acc > thr:
            return m
    return len(w) - 1


def greedy_action(w) -> int:
    """Most probable action; ties break toward the smaller charge ratio."""
    best = 0
    for m in range(1, len(w)):
        if w[m] > w[best]:
            best = m
    return best


def charge_count(n_m: int, n_c: int, alpha: float) -> int:
    """Number of EVs to charge: n_m + alpha*(n_c - n_m), rounded half-up."""
    return int(math.floor(n_m + alpha * (n_c - n_m) + 0.5))


def mllp_select(ids, trem, erem, count, *, proc_rate):
    """First `count` EVs by (laxity asc, processing time desc, id asc).

    Must-charge EVs sort ahead of deferrable ones because their laxity is
    below one stage, so any count >= n_m keeps them all plugged in.
    """
    ids = np.asarray(ids)
    trem = np.asarray(trem, dtype=float)
    erem = np.asarray(erem, dtype=float)
    proc = erem / proc_rate
    order = np.lexsort((ids, -proc, trem - proc))
    return [int(ids[i]) for i in order[: max(0, int(count))]]


@dataclass
class PolicyTable:
    weights: np.ndarray  # [K, T, N_BINS, M]
    alpha: np.ndarray  # [M]

    @classmethod
    def uniform(cls, n_buildings: int, n_stages: int, n_actions: int) -> "PolicyTable":
        w = np.full((n_buildings, n_stages, N_BINS, n_actions), 1.0 / n_actions)
        return cls(weights=w, alpha=action_grid(n_actions))

    @property
    def n_actions(self) -> int:
        return self.weights.shape[3]

    def cell(self, k: int, t: int, b: int) -> np.ndarray:
        """Weight vector for building k (1-based), stage t (wraps), bin b."""
        return self.weights[k - 1, t % self.weights.shape[1], b]

    def clip(self) -> None:
        np.clip(self.weights, W_MIN, 1.0, out=self.weights)

    def copy(self) -> "PolicyTable":
        return PolicyTable(self.weights.copy(), self.alpha.copy())

    def save(self, path) -> None:
        k, t, b, m = self.weights.shape
        doc = {
            "format": CKPT_FORMAT,
            "version": CKPT_VERSION,
            "buildings": k,
            "stages": t,
            "bins": b,
            "actions": m,
            "alpha": list(self.alpha),
            "weights": self.weights.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "PolicyTable":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != CKPT_FORMAT:
            raise ValueError(f"{path}: not a policy checkpoint")
        if doc.get("version") != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
        w = np.asarray(doc["weights"], dtype=float)
        expect = (doc["buildings"], doc["stages"], doc["bins"], doc["actions"])
        if w.shape != expect:
            raise ValueError(f"{path}: weight shape {w.shape} != header {expect}")
        return cls(weights=w, alpha=np.asarray(doc["alpha"], dtype=float))
