"""Scheduling policies: Whittle index, LLLP interchange, EDF, LLF, valley filling.

All policies are pure functions of the system state (plus precomputed tables)
returning a 0/1 activation vector with at most M ones.  Scalar entry points
wrap vectorized kernels that the simulator calls on whole seed batches; the
kernels operate on (S, N) arrays of lead times and demands.

Tie-breaking is fixed everywhere: policy criterion first, then larger demand,
then lower charger id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .model import Instance, SystemState
from .whittle import IndexTable

__all__ = [
    "PolicyDecision",
    "whittle_policy",
    "lllp_interchange",
    "edf_policy",
    "llf_policy",
    "valley_filling_policy",
    "CostForecast",
]

_BIG = np.inf


@dataclass
class PolicyDecision:
    """Activation vector plus the per-charger criterion values that chose it."""

    action: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _state_arrays(s: SystemState) -> tuple[np.ndarray, np.ndarray]:
    t = np.array([cs.T for cs in s.chargers], dtype=np.int64)
    b = np.array([cs.B for cs in s.chargers], dtype=np.int64)
    return t, b


def select_by_key(key: np.ndarray, b: np.ndarray, m: int, eligible: np.ndarray) -> np.ndarray:
    """Activate up to m eligible chargers with the smallest key.

    key, b, eligible: (S, N). Ties break toward larger B, then lower id.
    """
    s, n = key.shape
    ids = np.broadcast_to(np.arange(n), (s, n))
    masked = np.where(eligible, key, _BIG)
    order = np.lexsort((ids, -b, masked), axis=1)
    ranks = np.empty((s, n), dtype=np.int64)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(n), (s, n)).copy(), axis=1)
    return (ranks < m) & eligible


def whittle_kernel(
    t: np.ndarray, b: np.ndarray, j: np.ndarray, tau: int, table: IndexTable, m: int
) -> tuple[np.ndarray, np.ndarray]:
    """Batch Whittle decision; returns (action, index values).

    Ranking against M dummy arms of constant index 0 plus the strict-positivity
    rule collapses to: activate the top-m chargers by index among those with a
    strictly positive index.
    """
    v = table.values
    _, b_cap, k, nt = v.shape
    flat = v.ravel()
    comp = ((t * b_cap + b) * k + np.asarray(j).reshape(-1, 1)) * nt + (tau % nt)
    idx = flat[comp]
    eligible = (idx > 0.0) & (b > 0) & (t >= 1)
    return select_by_key(-idx, b, m, eligible), idx


def edf_kernel(t: np.ndarray, b: np.ndarray, m: int) -> np.ndarray:
    cand = (t >= 1) & (b > 0)
    return select_by_key(np.where(cand, t, 0), b, m, cand)


def llf_kernel(t: np.ndarray, b: np.ndarray, m: int) -> np.ndarray:
    cand = (t >= 1) & (b > 0)
    return select_by_key(np.where(cand, t - b, 0), b, m, cand)


def lllp_kernel(t: np.ndarray, b: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Batch LLLP interchange on (S, N) state arrays.

    A waiting charger i dominates an active charger k when its laxity is no
    larger and its demand no smaller, one of the two strictly.  Repeatedly
    swap the strongest such pair per seed: dominators scanned by (laxity
    ascending, demand descending, id), the replaced active charger by (laxity
    descending, demand ascending, id).  Each swap strictly lowers the active
    set's (laxity, -demand) rank profile, so this terminates.
    """
    act = active.copy()
    s, n = t.shape
    lax = t - b
    occ = (t >= 1) & (b > 0)
    ids = np.broadcast_to(np.arange(n), (s, n))
    b_max = int(b.max(initial=0))
    l_off = lax - lax.min(initial=0)  # nonnegative laxity ranks
    l_span = int(l_off.max(initial=0)) + 1
    fwd = (l_off * (b_max + 1) + (b_max - b)) * n + ids  # small = strong
    rev = ((l_span - 1 - l_off) * (b_max + 1) + b) * n + ids  # small = weak
    while True:
        cand = occ & ~act
        dom = (
            (lax[:, :, None] <= lax[:, None, :])
            & (b[:, :, None] >= b[:, None, :])
            & ((lax[:, :, None] < lax[:, None, :]) | (b[:, :, None] > b[:, None, :]))
            & cand[:, :, None]
            & act[:, None, :]
        )
        rows_with_pair = dom.any(axis=(1, 2))
        if not rows_with_pair.any():
            return act
        has_victim = dom.any(axis=2)
        i_key = np.where(has_victim, fwd, _BIG)
        i_star = np.argmin(i_key, axis=1)
        victims = np.take_along_axis(dom, i_star[:, None, None], axis=1)[:, 0, :]
        k_key = np.where(victims, rev, _BIG)
        k_star = np.argmin(k_key, axis=1)
        rows = np.nonzero(rows_with_pair)[0]
        act[rows, i_star[rows]] = True
        act[rows, k_star[rows]] = False


def whittle_policy(s: SystemState, table: IndexTable, m: int) -> PolicyDecision:
    """Rank occupied chargers by index against m zero-index dummy arms.

    Activates at most m chargers, never one whose index is not strictly
    positive (a tie with a dummy arm resolves to idling).
    """
    t, b = _state_arrays(s)
    j = np.array([s.cost_state])
    action, idx = whittle_kernel(t[None, :], b[None, :], j, s.period, table, m)
    return PolicyDecision(action[0].astype(np.int8), {"index": idx[0]})


def lllp_interchange(s: SystemState, action: np.ndarray) -> np.ndarray:
    t, b = _state_arrays(s)
    out = lllp_kernel(t[None, :], b[None, :], np.asarray(action, dtype=bool)[None, :])
    return out[0].astype(np.int8)


def edf_policy(s: SystemState, m: int) -> PolicyDecision:
    t, b = _state_arrays(s)
    action = edf_kernel(t[None, :], b[None, :], m)[0]
    return PolicyDecision(action.astype(np.int8), {"deadline": t})


def llf_policy(s: SystemState, m: int) -> PolicyDecision:
    t, b = _state_arrays(s)
    action = llf_kernel(t[None, :], b[None, :], m)[0]
    return PolicyDecision(action.astype(np.int8), {"laxity": t - b})


class CostForecast:
    """Conditional expected cost k slots ahead, for every (level, period).

    exp_cost[j, tau, k] = E[c at k slots ahead | level j in period tau],
    propagated through the chain's (possibly per-period) transition matrices.
    """

    def __init__(self, instance: Instance, horizon: int | None = None):
        k = instance.cost.n_levels
        nt = instance.n_periods
        h = instance.t_max if horizon is None else horizon
        vals = instance.cost.values
        out = np.empty((k, nt, h + 1))
        for tau in range(nt):
            row = np.eye(k)
            out[:, tau, 0] = vals
            for step in range(1, h + 1):
                row = row @ instance.cost.matrix_for(tau + step - 1)
                out[:, tau, step] = row @ vals
        self.exp_cost = out

    def forecast(self, j: int, tau: int, k: int) -> float:
        return float(self.exp_cost[j, tau % self.exp_cost.shape[1], k])


def valley_filling_policy(
    s: SystemState, instance: Instance, cost_forecast: CostForecast
) -> PolicyDecision:
    """Plan all outstanding demand into expected-cheapest future slots.

    Deterministic transportation problem over the horizon of the latest
    deadline: one unit of EV i in future slot k earns 1 - E[c at k]; units
    left unassigned pay the marginal penalty increments of F at the deadline.
    The constraint matrix is totally unimodular, so the LP vertex returned by
    the simplex solver is integral.  Only slot 0 of the plan is executed;
    everything is replanned next slot (no future arrivals assumed).
    """
    t, b = _state_arrays(s)
    m = instance.capacity
    occupied = np.nonzero((t >= 1) & (b > 0))[0]
    n = instance.n_chargers
    if occupied.size == 0 or m == 0:
        return PolicyDecision(np.zeros(n, dtype=np.int8), {"plan": None})
    horizon = int(t[occupied].max())
    ec = np.array(
        [cost_forecast.forecast(s.cost_state, s.period, k) for k in range(horizon)]
    )
    cols = []  # (ev_row, slot or None, cost)
    for row, i in enumerate(occupied):
        for k in range(int(t[i])):
            cols.append((row, k, -(1.0 - ec[k])))
        for u in range(1, int(b[i]) + 1):
            cols.append((row, None, float(instance.penalty.delta(u))))
    nv = len(cols)
    c_obj = np.array([c for _, _, c in cols])
    a_eq = np.zeros((occupied.size, nv))
    b_eq = b[occupied].astype(float)
    a_ub = np.zeros((horizon, nv))
    for v, (row, k, _) in enumerate(cols):
        a_eq[row, v] = 1.0
        if k is not None:
            a_ub[k, v] = 1.0
    res = linprog(
        c_obj,
        A_ub=a_ub,
        b_ub=np.full(horizon, float(m)),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=(0.0, 1.0),
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"valley-filling plan failed: {res.message}")
    x = res.x
    if np.any(np.abs(x - np.round(x)) > 1e-7):
        raise RuntimeError("valley-filling plan is not integral")
    action = np.zeros(n, dtype=np.int8)
    plan = np.zeros((occupied.size, horizon))
    for v, (row, k, _) in enumerate(cols):
        if k is not None and x[v] > 0.5:
            plan[row, k] = 1.0
            if k == 0:
                action[occupied[row]] = 1
    return PolicyDecision(action, {"plan": plan, "chargers": occupied})
