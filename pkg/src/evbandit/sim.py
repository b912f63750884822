"""Seeded Monte Carlo engine with common random numbers across policies.

All exogenous randomness is action-independent: the cost chain moves on its
own, lead times tick down deterministically, and a charger's occupancy in the
next slot is decided by arrival/type draws only when it vacates.  The engine
therefore pregenerates (or regenerates identically) three named streams per
seed — cost path, arrival coin flips, EV type draws — indexed by slot, so
every policy sees exactly the same world and paired comparisons subtract the
same noise.

Episodes for all seeds advance together as (n_seeds, n_chargers) arrays; a
policy is a vectorized kernel over that batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy import stats

from .model import ChargerState, EMPTY, Instance, SystemState
from .policies import (
    CostForecast,
    edf_kernel,
    llf_kernel,
    lllp_kernel,
    valley_filling_policy,
    whittle_kernel,
)
from .whittle import IndexTable, compute_index_table

__all__ = [
    "EpisodeMetrics",
    "ComparisonReport",
    "default_horizon",
    "run_episode",
    "monte_carlo",
    "brute_force_joint_dp",
    "evaluate_policy_exact",
]

POLICY_NAMES = ("whittle", "whittle+lllp", "edf", "llf", "valley")

_CHUNK = 1024


@dataclass
class EpisodeMetrics:
    """Per-episode accounting.  discounted_reward is revenue − cost − penalty
    by construction; the three parts are accumulated with the same discount
    weights the reward definition uses."""

    policy: str
    seed: int
    horizon: int
    discounted_reward: float
    revenue: float
    energy_cost: float
    penalty: float
    delivered_units: int
    arrived_units: int
    unserved_units: int
    completion_fraction: float
    activations_per_slot: float
    interchanges: int

    _FIELDS = (
        "policy",
        "seed",
        "horizon",
        "discounted_reward",
        "revenue",
        "energy_cost",
        "penalty",
        "delivered_units",
        "arrived_units",
        "unserved_units",
        "completion_fraction",
        "activations_per_slot",
        "interchanges",
    )


def default_horizon(instance: Instance, tol: float = 1e-3) -> int:
    """Smallest H with beta^H (1 + max dF) / (1 - beta) <= tol per charger."""
    beta = instance.discount
    scale = (1.0 + instance.penalty.max_increment) / (1.0 - beta)
    return max(1, int(np.ceil(np.log(tol / scale) / np.log(beta))))


def _streams(seed: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(int(seed)).spawn(3)


def _cost_paths(instance: Instance, seeds, horizon: int) -> np.ndarray:
    """(n_seeds, horizon) cost-state paths; start from the stationary law."""
    s = len(seeds)
    k = instance.cost.n_levels
    u = np.empty((s, horizon + 1))
    for i, sd in enumerate(seeds):
        u[i] = np.random.default_rng(_streams(sd)[0]).random(horizon + 1)
    path = np.empty((s, max(horizon, 1)), dtype=np.int16)
    cum0 = np.cumsum(instance.cost.stationary())
    path[:, 0] = np.minimum(np.searchsorted(cum0, u[:, 0], side="right"), k - 1)
    cums = [
        np.cumsum(instance.cost.matrix_for(tau), axis=1) for tau in range(instance.n_periods)
    ]
    for t in range(horizon - 1):
        rows = cums[t % instance.n_periods][path[:, t]]
        path[:, t + 1] = np.minimum((u[:, t + 1, None] > rows).sum(axis=1), k - 1)
    return path


def _type_tables(instance: Instance):
    out = []
    for tau in range(instance.n_periods):
        pmf = instance.arrivals.pmf_for(tau)
        tt, bb = np.nonzero(pmf)
        cum = np.cumsum(pmf[tt, bb])
        out.append((cum, tt.astype(np.int64), bb.astype(np.int64)))
    return out


def _policy_kernel(name: str, instance: Instance, table, forecast):
    m = instance.capacity
    if name in ("whittle", "whittle+lllp"):
        if table is None:
            raise ValueError("whittle policies need an index table")

        def kern(t, b, j, tau):
            return whittle_kernel(t, b, j, tau, table, m)[0]

        return kern, name.endswith("lllp")
    if name == "edf":
        return (lambda t, b, j, tau: edf_kernel(t, b, m)), False
    if name == "llf":
        return (lambda t, b, j, tau: llf_kernel(t, b, m)), False
    if name == "valley":
        if forecast is None:
            forecast = CostForecast(instance)

        def kern(t, b, j, tau):
            s_count, n = t.shape
            out = np.zeros((s_count, n), dtype=bool)
            for s in range(s_count):
                st = SystemState(
                    [ChargerState(int(t[s, i]), int(b[s, i])) for i in range(n)],
                    int(j[s]),
                    tau,
                )
                out[s] = valley_filling_policy(st, instance, forecast).action.astype(bool)
            return out

        return kern, False
    raise ValueError(f"unknown policy {name!r}")


def _run_batch(
    instance: Instance,
    policy: str,
    seeds,
    horizon: int,
    cost_path: np.ndarray,
    table=None,
    forecast=None,
) -> list[EpisodeMetrics]:
    kern, use_lllp = _policy_kernel(policy, instance, table, forecast)
    s = len(seeds)
    n = instance.n_chargers
    m = instance.capacity
    beta = instance.discount
    nt = instance.n_periods
    cvals = instance.cost.values
    ftab = instance.penalty.table
    rho = np.array([instance.arrivals.rho_for(tau) for tau in range(nt)])
    types = _type_tables(instance)

    arr_gens = [np.random.default_rng(_streams(sd)[1]) for sd in seeds]
    type_gens = [np.random.default_rng(_streams(sd)[2]) for sd in seeds]
    u_arr = np.empty((s, _CHUNK, n))
    u_typ = np.empty((s, _CHUNK, n))

    t_arr = np.zeros((s, n), dtype=np.int64)
    b_arr = np.zeros((s, n), dtype=np.int64)
    revenue = np.zeros(s)
    energy_cost = np.zeros(s)
    penalty = np.zeros(s)
    delivered = np.zeros(s, dtype=np.int64)
    arrived = np.zeros(s, dtype=np.int64)
    unserved = np.zeros(s, dtype=np.int64)
    activations = np.zeros(s, dtype=np.int64)
    interchanges = np.zeros(s, dtype=np.int64)
    disc = 1.0

    for t in range(horizon):
        r = t % _CHUNK
        if r == 0:
            for i in range(s):
                u_arr[i] = arr_gens[i].random((_CHUNK, n))
                u_typ[i] = type_gens[i].random((_CHUNK, n))
        tau = t % nt
        j = cost_path[:, t]
        c = cvals[j]

        action = kern(t_arr, b_arr, j, tau)
        if use_lllp:
            swapped = lllp_kernel(t_arr, b_arr, action)
            interchanges += np.any(swapped != action, axis=1)
            action = swapped
        if np.any(action.sum(axis=1) > m):
            raise RuntimeError(f"policy {policy!r} violated the capacity limit")

        eff = action & (b_arr > 0) & (t_arr >= 1)
        served = eff.sum(axis=1)
        revenue += disc * served
        energy_cost += disc * served * c
        at_deadline = t_arr == 1
        b_after = b_arr - eff
        penalty += disc * np.where(at_deadline, ftab[b_after], 0.0).sum(axis=1)
        delivered += served
        unserved += (b_after * at_deadline).sum(axis=1)
        activations += action.sum(axis=1)

        stay = t_arr > 1
        t_next = np.where(stay, t_arr - 1, 0)
        b_next = np.where(stay, b_after, 0)
        cum, tt, bb = types[tau]
        arrives = (t_arr <= 1) & (u_arr[:, r] < rho[tau])
        ridx = np.minimum(np.searchsorted(cum, u_typ[:, r], side="right"), cum.size - 1)
        t_arr = np.where(arrives, tt[ridx], t_next)
        b_arr = np.where(arrives, bb[ridx], b_next)
        arrived += (bb[ridx] * arrives).sum(axis=1)
        disc *= beta

    out = []
    for i, sd in enumerate(seeds):
        comp = 1.0 if arrived[i] == 0 else 1.0 - unserved[i] / arrived[i]
        out.append(
            EpisodeMetrics(
                policy=policy,
                seed=int(sd),
                horizon=horizon,
                discounted_reward=float(revenue[i] - energy_cost[i] - penalty[i]),
                revenue=float(revenue[i]),
                energy_cost=float(energy_cost[i]),
                penalty=float(penalty[i]),
                delivered_units=int(delivered[i]),
                arrived_units=int(arrived[i]),
                unserved_units=int(unserved[i]),
                completion_fraction=float(comp),
                activations_per_slot=float(activations[i] / horizon),
                interchanges=int(interchanges[i]),
            )
        )
    return out


def run_episode(
    instance: Instance,
    policy: str,
    seed: int,
    horizon: int | None = None,
    table: IndexTable | None = None,
    truncation_tol: float = 1e-3,
) -> EpisodeMetrics:
    """One seeded episode from an empty facility; see monte_carlo for batches."""
    if horizon is None:
        horizon = default_horizon(instance, truncation_tol)
    if table is None and policy.startswith("whittle"):
        table = compute_index_table(instance)
    cost_path = _cost_paths(instance, [seed], horizon)
    return _run_batch(instance, policy, [seed], horizon, cost_path, table)[0]


@dataclass
class ComparisonReport:
    """Per-policy episode metrics over a common seed set, plus paired stats."""

    policies: list[str]
    seeds: list[int]
    horizon: int
    episodes: dict[str, list[EpisodeMetrics]]
    baseline: str | None = None

    def rewards(self, policy: str) -> np.ndarray:
        return np.array([e.discounted_reward for e in self.episodes[policy]])

    def mean_ci(self, policy: str) -> tuple[float, float]:
        """(mean, 95% half-width) of the discounted reward."""
        x = self.rewards(policy)
        half = 0.0
        if x.size > 1:
            half = float(stats.t.ppf(0.975, x.size - 1) * x.std(ddof=1) / np.sqrt(x.size))
        return float(x.mean()), half

    def paired(self, policy: str, baseline: str | None = None) -> tuple[float, float]:
        """(mean, 95% half-width) of per-seed reward differences vs baseline."""
        base = baseline or self.baseline
        if base is None:
            raise ValueError("no baseline configured")
        d = self.rewards(policy) - self.rewards(base)
        half = 0.0
        if d.size > 1:
            half = float(stats.t.ppf(0.975, d.size - 1) * d.std(ddof=1) / np.sqrt(d.size))
        return float(d.mean()), half

    def summary(self) -> dict:
        out = {
            "horizon": self.horizon,
            "n_seeds": len(self.seeds),
            "policies": {},
        }
        for p in self.policies:
            mean, half = self.mean_ci(p)
            row = {"mean_reward": mean, "ci95_half_width": half}
            if self.baseline is not None and p != self.baseline:
                dm, dh = self.paired(p)
                row["paired_diff_vs_" + self.baseline] = dm
                row["paired_ci95_half_width"] = dh
            out["policies"][p] = row
        return out

    def to_csv(self, path) -> None:
        cols = EpisodeMetrics._FIELDS
        with open(path, "w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for p in self.policies:
                for e in self.episodes[p]:
                    vals = []
                    for cname in cols:
                        v = getattr(e, cname)
                        vals.append(repr(v) if isinstance(v, float) else str(v))
                    fh.write(",".join(vals) + "\n")

    def to_json(self, path) -> None:
        import json

        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=1)


def monte_carlo(
    instance: Instance,
    policies,
    seeds,
    horizon: int | None = None,
    baseline: str | None = None,
    table: IndexTable | None = None,
    truncation_tol: float = 1e-3,
) -> ComparisonReport:
    """Run every policy over the same seeds with common random numbers."""
    if isinstance(seeds, (int, np.integer)):
        seeds = list(range(int(seeds)))
    else:
        seeds = [int(x) for x in seeds]
    if len(seeds) < 2:
        raise ValueError("need at least 2 seeds for a comparison")
    policies = list(policies)
    for p in policies:
        if p not in POLICY_NAMES:
            raise ValueError(f"unknown policy {p!r}; choose from {POLICY_NAMES}")
    if baseline is not None and baseline not in policies:
        raise ValueError("baseline must be one of the policies")
    if horizon is None:
        horizon = default_horizon(instance, truncation_tol)
    if table is None and any(p.startswith("whittle") for p in policies):
        table = compute_index_table(instance)
    forecast = CostForecast(instance) if "valley" in policies else None
    cost_path = _cost_paths(instance, seeds, horizon)
    episodes = {}
    for p in policies:
        episodes[p] = _run_batch(instance, p, seeds, horizon, cost_path, table, forecast)
    return ComparisonReport(policies, seeds, horizon, episodes, baseline)


# ---------------------------------------------------------------------------
# exact small-instance machinery (test oracles)


def _joint_parts(instance: Instance):
    css = instance.charger_states()
    n_cs = len(css)
    k = instance.cost.n_levels
    nt = instance.n_periods
    idx = {cs: i for i, cs in enumerate(css)}
    move = np.zeros((2, nt, n_cs, n_cs))
    for a in (0, 1):
        for tau in range(nt):
            rho = instance.arrivals.rho_for(tau)
            pmf = instance.arrivals.pmf_for(tau)
            for i, (t, b) in enumerate(css):
                if t > 1:
                    eff = a if b > 0 else 0
                    move[a, tau, i, idx[ChargerState(t - 1, b - eff)]] = 1.0
                else:
                    move[a, tau, i, idx[EMPTY]] = 1.0 - rho
                    for (tt, bb) in zip(*np.nonzero(pmf)):
                        move[a, tau, i, idx[ChargerState(int(tt), int(bb))]] += rho * pmf[tt, bb]
    rew = np.zeros((2, n_cs, k))
    cv = instance.cost.values
    f = instance.penalty
    for i, (t, b) in enumerate(css):
        if t < 1 or b == 0:
            continue
        if t == 1:
            rew[0, i] = -float(f(b))
            rew[1, i] = (1.0 - cv) - float(f(b - 1))
        else:
            rew[1, i] = 1.0 - cv
    return css, move, rew


def _check_joint_size(instance: Instance) -> int:
    n_cs = 1 + instance.t_max * (instance.b_max + 1)
    total = n_cs ** instance.n_chargers * instance.cost.n_levels * instance.n_periods
    if total > 1_000_000:
        raise ValueError(f"joint state space too large ({total} states)")
    return n_cs


def brute_force_joint_dp(instance: Instance, tol: float = 1e-8):
    """Optimal joint value by value iteration over the full system MDP.

    Only for toy instances (state count capped at 1e6).  Returns
    (value at the empty-facility start, greedy action table); the table maps a
    flattened joint state index to the optimal action tuple.
    """
    n_cs = _check_joint_size(instance)
    css, move, rew = _joint_parts(instance)
    n = instance.n_chargers
    k = instance.cost.n_levels
    nt = instance.n_periods
    beta = instance.discount
    actions = [a for a in product((0, 1), repeat=n) if sum(a) <= instance.capacity]
    p_cost = [instance.cost.matrix_for(tau) for tau in range(nt)]

    shape = (n_cs,) * n + (k, nt)
    r_a = {}
    for a in actions:
        r = np.zeros((n_cs,) * n + (k,))
        for i, ai in enumerate(a):
            sl = [None] * n + [slice(None)]
            sl[i] = slice(None)
            r = r + rew[ai][tuple(sl)]
        r_a[a] = r

    r_sup = max(float(np.abs(r).max()) for r in r_a.values())
    if r_sup == 0:
        n_iter = 1
    else:
        n_iter = max(1, int(np.ceil(np.log(tol * (1 - beta) / r_sup) / np.log(beta))))

    v = np.zeros(shape)
    for _ in range(n_iter):
        vn = np.empty(shape)
        for tau in range(nt):
            w = v[..., (tau + 1) % nt]
            w = np.tensordot(w, p_cost[tau], axes=([-1], [1]))  # expected over next cost
            best = None
            for a in actions:
                ev = w
                for i, ai in enumerate(a):
                    ev = np.moveaxis(np.tensordot(move[ai, tau], ev, axes=([1], [i])), 0, i)
                q = r_a[a] + beta * ev
                best = q if best is None else np.maximum(best, q)
            vn[..., tau] = best
        v = vn

    policy = {}
    for tau in range(nt):
        w = v[..., (tau + 1) % nt]
        w = np.tensordot(w, p_cost[tau], axes=([-1], [1]))
        best = None
        arg = None
        for a in actions:
            ev = w
            for i, ai in enumerate(a):
                ev = np.moveaxis(np.tensordot(move[ai, tau], ev, axes=([1], [i])), 0, i)
            q = r_a[a] + beta * ev
            if best is None:
                best = q.copy()
                arg = np.zeros(q.shape, dtype=np.int64)
            else:
                upd = q > best
                best = np.where(upd, q, best)
                arg[upd] = actions.index(a)
        policy[tau] = arg
    pi0 = instance.cost.stationary()
    empty = 0
    start = v[(empty,) * n]  # (k, nt)
    value = float(pi0 @ start[:, 0])
    table = {"actions": actions, "choice": policy}
    return value, table


def evaluate_policy_exact(instance: Instance, decide, tol: float = 1e-8) -> float:
    """Exact discounted value of a stationary policy on a toy instance.

    ``decide`` maps a SystemState to a 0/1 action vector; it is called once
    per joint state to tabulate the policy, then evaluated by iteration.
    """
    n_cs = _check_joint_size(instance)
    css, move, rew = _joint_parts(instance)
    n = instance.n_chargers
    k = instance.cost.n_levels
    nt = instance.n_periods
    beta = instance.discount
    actions = [a for a in product((0, 1), repeat=n) if sum(a) <= instance.capacity]
    a_index = {a: i for i, a in enumerate(actions)}
    p_cost = [instance.cost.matrix_for(tau) for tau in range(nt)]
    shape = (n_cs,) * n + (k, nt)

    choice = np.empty(shape, dtype=np.int64)
    for cs_ids in product(range(n_cs), repeat=n):
        chargers = [css[i] for i in cs_ids]
        for j in range(k):
            for tau in range(nt):
                st = SystemState(chargers, j, tau)
                act = tuple(int(x) for x in decide(st))
                if sum(act) > instance.capacity:
                    raise RuntimeError("policy violated the capacity limit")
                choice[cs_ids + (j, tau)] = a_index[act]

    r_a = {}
    for a in actions:
        r = np.zeros((n_cs,) * n + (k,))
        for i, ai in enumerate(a):
            sl = [None] * n + [slice(None)]
            sl[i] = slice(None)
            r = r + rew[ai][tuple(sl)]
        r_a[a] = r
    r_sup = max(float(np.abs(r).max()) for r in r_a.values())
    n_iter = 1 if r_sup == 0 else max(
        1, int(np.ceil(np.log(tol * (1 - beta) / r_sup) / np.log(beta)))
    )

    v = np.zeros(shape)
    for _ in range(n_iter):
        vn = np.empty(shape)
        for tau in range(nt):
            w = v[..., (tau + 1) % nt]
            w = np.tensordot(w, p_cost[tau], axes=([-1], [1]))
            acc = np.zeros((n_cs,) * n + (k,))
            for ai, a in enumerate(actions):
                mask = choice[..., tau] == ai
                if not mask.any():
                    continue
                ev = w
                for i, av in enumerate(a):
                    ev = np.moveaxis(np.tensordot(move[av, tau], ev, axes=([1], [i])), 0, i)
                q = r_a[a] + beta * ev
                acc = np.where(mask, q, acc)
            vn[..., tau] = acc
        v = vn
    pi0 = instance.cost.stationary()
    return float(pi0 @ v[(0,) * n][:, 0])
