"""Core model for deadline-constrained EV charging under a shared capacity limit.

A station has N chargers and can energize at most M of them per slot.  Each
occupied charger holds one EV described by a lead time T (slots until
departure, counting the current one) and a remaining demand B (slots of
charging still owed).  Electricity cost follows a finite Markov chain, and a
global period index cycles through N_tau slots to capture time-of-day effects.
Unmet demand at departure is charged through an increasing convex penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

__all__ = [
    "ChargerState",
    "EMPTY",
    "PenaltyFunction",
    "CostChain",
    "ArrivalModel",
    "Instance",
    "SystemState",
    "reward",
    "successor_distribution",
    "system_step",
    "discounted_return",
]


class ChargerState(NamedTuple):
    """Per-charger state.  ``T`` slots to departure, ``B`` slots of unmet demand.

    The empty charger is (0, 0).  Occupied states have 1 <= T and 0 <= B.
    """

    T: int
    B: int

    @property
    def occupied(self) -> bool:
        return self.T > 0


EMPTY = ChargerState(0, 0)


@dataclass(frozen=True)
class PenaltyFunction:
    """Terminal penalty F on unmet demand, given as a table F(0..B_max).

    Must satisfy F(0) = 0, be nondecreasing and convex (nondecreasing
    increments).  Stored as a plain table so both closed-form expressions and
    tabulated penalties share one code path.
    """

    table: np.ndarray

    def __post_init__(self):
        tab = np.asarray(self.table, dtype=float)
        object.__setattr__(self, "table", tab)
        if tab.ndim != 1 or tab.size < 1:
            raise ValueError("penalty table must be a non-empty 1-D array")
        if tab[0] != 0.0:
            raise ValueError("penalty must satisfy F(0) = 0")
        inc = np.diff(tab)
        if tab.size > 1 and (np.any(inc < -1e-12) or np.any(np.diff(inc) < -1e-12)):
            raise ValueError("penalty must be nondecreasing and convex")

    @classmethod
    def quadratic(cls, kappa: float, b_max: int) -> "PenaltyFunction":
        b = np.arange(b_max + 1)
        return cls(kappa * b.astype(float) ** 2)

    def __call__(self, b) -> np.ndarray | float:
        return self.table[b]

    def delta(self, b) -> np.ndarray | float:
        """Marginal penalty F(b) - F(b-1) for b >= 1."""
        return self.table[b] - self.table[np.asarray(b) - 1]

    @property
    def max_increment(self) -> float:
        if self.table.size < 2:
            return 0.0
        return float(np.max(np.diff(self.table)))


@dataclass(frozen=True)
class CostChain:
    """Finite Markov chain of normalized electricity cost levels.

    ``values`` holds the K cost levels (fractions of the retail price, so a
    level of 1 means charging at that level breaks even).  Transitions are a
    single row-stochastic matrix ``P`` applied every slot, or optionally one
    matrix per period of the cycle (``P_per_period``, shape (N_tau, K, K)),
    where the matrix of the *current* period governs the step out of it.
    """

    values: np.ndarray
    P: np.ndarray | None = None
    P_per_period: np.ndarray | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1 or vals.size < 1:
            raise ValueError("cost values must be a non-empty 1-D array")
        if (self.P is None) == (self.P_per_period is None):
            raise ValueError("exactly one of P and P_per_period must be given")
        k = vals.size
        if self.P is not None:
            P = np.asarray(self.P, dtype=float)
            object.__setattr__(self, "P", P)
            _check_stochastic(P, (k, k))
        else:
            Pp = np.asarray(self.P_per_period, dtype=float)
            object.__setattr__(self, "P_per_period", Pp)
            if Pp.ndim != 3 or Pp.shape[1:] != (k, k):
                raise ValueError("P_per_period must have shape (N_tau, K, K)")
            for m in Pp:
                _check_stochastic(m, (k, k))

    @property
    def n_levels(self) -> int:
        return self.values.size

    def matrix_for(self, tau: int) -> np.ndarray:
        if self.P is not None:
            return self.P
        return self.P_per_period[tau % self.P_per_period.shape[0]]

    def stationary(self) -> np.ndarray:
        """Stationary distribution of the per-slot chain.

        With per-period matrices this is the stationary law of the product
        chain over one full cycle, averaged over the cycle offset.
        """
        if self.P is not None:
            return _stationary_of(self.P)
        prod = np.eye(self.n_levels)
        for m in self.P_per_period:
            prod = prod @ m
        pi0 = _stationary_of(prod)
        dists = [pi0]
        for m in self.P_per_period[:-1]:
            dists.append(dists[-1] @ m)
        return np.mean(dists, axis=0)

    @classmethod
    def constant(cls, value: float) -> "CostChain":
        return cls(values=np.array([value]), P=np.eye(1))


def _check_stochastic(P: np.ndarray, shape) -> None:
    if P.shape != shape:
        raise ValueError(f"transition matrix must have shape {shape}")
    if np.any(P < -1e-12):
        raise ValueError("transition matrix has negative entries")
    if not np.allclose(P.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("transition matrix rows must sum to 1")


def _stationary_of(P: np.ndarray) -> np.ndarray:
    k = P.shape[0]
    A = np.vstack([P.T - np.eye(k), np.ones((1, k))])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass(frozen=True)
class ArrivalModel:
    """Arrival process at a vacated charger, possibly periodic.

    When a charger frees up in a slot of period tau, a new EV arrives with
    probability rho[tau]; its (T, B) type is drawn from pmf[tau], an array of
    shape (T_max + 1, B_max + 1) supported on 1 <= T <= T_max,
    0 <= B <= min(T, B_max).  Otherwise the charger stays empty for the slot.
    """

    n_periods: int
    rho: np.ndarray
    pmf: np.ndarray

    def __post_init__(self):
        rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        pmf = np.asarray(self.pmf, dtype=float)
        if pmf.ndim == 2:
            pmf = np.broadcast_to(pmf, (self.n_periods,) + pmf.shape).copy()
        if rho.size == 1:
            rho = np.full(self.n_periods, rho[0])
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "pmf", pmf)
        if self.n_periods < 1:
            raise ValueError("n_periods must be >= 1")
        if rho.shape != (self.n_periods,) or np.any(rho < 0) or np.any(rho > 1):
            raise ValueError("rho must be probabilities, one per period")
        if pmf.shape[0] != self.n_periods or pmf.ndim != 3:
            raise ValueError("pmf must have shape (n_periods, T_max+1, B_max+1)")
        if np.any(pmf < 0) or not np.allclose(pmf.sum(axis=(1, 2)), 1.0, atol=1e-9):
            raise ValueError("each per-period pmf must sum to 1")
        t_max = pmf.shape[1] - 1
        for p in pmf:
            if p[0, :].sum() > 1e-12:
                raise ValueError("arrivals must have T >= 1")
            for t in range(1, t_max + 1):
                if p[t, t + 1 :].sum() > 1e-12:
                    raise ValueError("arrivals must satisfy B <= T")

    @classmethod
    def uniform_feasible(
        cls, t_max: int, b_max: int, rho, n_periods: int = 1
    ) -> "ArrivalModel":
        """Uniform over {(T, B): 1 <= T <= t_max, 1 <= B <= min(T, b_max)}."""
        pmf = np.zeros((t_max + 1, b_max + 1))
        for t in range(1, t_max + 1):
            pmf[t, 1 : min(t, b_max) + 1] = 1.0
        pmf /= pmf.sum()
        return cls(n_periods=n_periods, rho=rho, pmf=pmf)

    def rho_for(self, tau: int) -> float:
        return float(self.rho[tau % self.n_periods])

    def pmf_for(self, tau: int) -> np.ndarray:
        return self.pmf[tau % self.n_periods]


@dataclass(frozen=True)
class Instance:
    """A complete problem instance.

    Attributes:
        n_chargers: number of chargers N.
        capacity: per-slot activation budget M (0 <= M <= N).
        discount: per-slot discount factor beta in (0, 1).
        t_max: largest lead time an arriving EV can have.
        b_max: largest demand an arriving EV can have.
        penalty: terminal penalty on unmet demand.
        arrivals: arrival process at vacated chargers.
        cost: electricity cost chain.
    """

    n_chargers: int
    capacity: int
    discount: float
    t_max: int
    b_max: int
    penalty: PenaltyFunction
    arrivals: ArrivalModel
    cost: CostChain

    def __post_init__(self):
        if not (0 <= self.capacity <= self.n_chargers):
            raise ValueError("need 0 <= capacity <= n_chargers")
        if not (0.0 < self.discount < 1.0):
            raise ValueError("discount must lie in (0, 1)")
        if self.t_max < 1 or self.b_max < 1:
            raise ValueError("t_max and b_max must be >= 1")
        if self.b_max > self.t_max:
            raise ValueError("b_max cannot exceed t_max (arrivals need B <= T)")
        if self.penalty.table.size < self.b_max + 1:
            raise ValueError("penalty table must cover 0..b_max")
        if self.arrivals.pmf.shape[1:] != (self.t_max + 1, self.b_max + 1):
            raise ValueError("arrival pmf shape must match (t_max+1, b_max+1)")
        if self.cost.P_per_period is not None:
            if self.cost.P_per_period.shape[0] != self.n_periods:
                raise ValueError("per-period cost matrices must match n_periods")

    @property
    def n_periods(self) -> int:
        return self.arrivals.n_periods

    def charger_states(self) -> list[ChargerState]:
        """All per-charger states: EMPTY plus the occupied grid."""
        out = [EMPTY]
        for t in range(1, self.t_max + 1):
            for b in range(self.b_max + 1):
                out.append(ChargerState(t, b))
        return out

    def reward_bound(self) -> float:
        """Upper bound on the absolute one-slot reward of a single charger."""
        c = self.cost.values
        return max(1.0 + max(0.0, -float(c.min())), 0.0) + self.penalty.max_increment


@dataclass
class SystemState:
    """Joint station state: one ChargerState per charger, cost level, period."""

    chargers: list[ChargerState]
    cost_state: int
    period: int

    def copy(self) -> "SystemState":
        return SystemState(list(self.chargers), self.cost_state, self.period)


def reward(state: ChargerState, cost: float, action: int, penalty: PenaltyFunction) -> float:
    """One-slot reward of a single charger.

    Charging one slot earns the retail margin 1 - cost.  In the final slot
    before departure the terminal penalty on whatever demand remains after the
    action is charged.  Empty or fully served chargers earn nothing.
    """
    t, b = state
    if t < 1 or b == 0:
        return 0.0
    a = int(action) if b > 0 else 0
    r = (1.0 - cost) * a
    if t == 1:
        r -= float(penalty(b - a))
    return r


def successor_distribution(
    state: ChargerState, action: int, tau: int, instance: Instance
) -> list[tuple[ChargerState, float]]:
    """Distribution of the next charger state under ``action`` in period ``tau``.

    With more than one slot left the EV stays and its demand drops by the
    action; in the final slot the charger is vacated and an arrival may take
    the spot.  The arrival law of the current period applies.
    """
    t, b = state
    a = int(action)
    if t > 1:
        return [(ChargerState(t - 1, b - a if b > 0 else 0), 1.0)]
    rho = instance.arrivals.rho_for(tau)
    pmf = instance.arrivals.pmf_for(tau)
    out = []
    if rho < 1.0:
        out.append((EMPTY, 1.0 - rho))
    if rho > 0.0:
        for (tt, bb) in zip(*np.nonzero(pmf)):
            out.append((ChargerState(int(tt), int(bb)), rho * float(pmf[tt, bb])))
    return out


def system_step(
    instance: Instance, state: SystemState, action: np.ndarray, rng: np.random.Generator
) -> tuple[SystemState, float]:
    """Advance the joint state one slot; returns (next state, summed reward).

    ``action`` is a 0/1 vector over chargers with at most ``capacity`` ones.
    Actions on empty or zero-demand chargers are ignored for the transition
    but still count against the budget check.
    """
    action = np.asarray(action, dtype=int)
    if action.shape != (instance.n_chargers,) or np.any((action != 0) & (action != 1)):
        raise ValueError("action must be a 0/1 vector over chargers")
    if action.sum() > instance.capacity:
        raise ValueError("action exceeds the station capacity")
    tau = state.period % instance.n_periods
    c = float(instance.cost.values[state.cost_state])
    total = 0.0
    nxt: list[ChargerState] = []
    for s, a in zip(state.chargers, action):
        total += reward(s, c, a, instance.penalty)
        t, b = s
        eff = a if (t >= 1 and b > 0) else 0
        if t > 1:
            nxt.append(ChargerState(t - 1, b - eff))
        else:
            if rng.random() < instance.arrivals.rho_for(tau):
                pmf = instance.arrivals.pmf_for(tau)
                flat = rng.choice(pmf.size, p=pmf.ravel())
                tt, bb = np.unravel_index(flat, pmf.shape)
                nxt.append(ChargerState(int(tt), int(bb)))
            else:
                nxt.append(EMPTY)
    P = instance.cost.matrix_for(tau)
    j = int(rng.choice(instance.cost.n_levels, p=P[state.cost_state]))
    return SystemState(nxt, j, (state.period + 1) % instance.n_periods), total


def discounted_return(rewards: np.ndarray, discount: float) -> float:
    """Sum of beta^t * r_t over a reward sequence."""
    rewards = np.asarray(rewards, dtype=float)
    return float(rewards @ np.power(discount, np.arange(rewards.size)))
