"""Scheduling engine and Monte Carlo testbed for large-scale EV charging.

A station with N chargers can energize at most M per slot; EVs carry deadlines
and integer charging demands, electricity cost follows a finite Markov chain.
The package computes Whittle indexes for this restless-bandit formulation,
runs index/EDF/LLF/valley-filling policies through a seeded simulator, and
bounds all of them by the budget-relaxed single-charger MDP.
"""

from .model import (
    ArrivalModel,
    ChargerState,
    CostChain,
    EMPTY,
    Instance,
    PenaltyFunction,
    SystemState,
    discounted_return,
    reward,
    successor_distribution,
    system_step,
)
from .whittle import (
    ExtendedState,
    IndexTable,
    base_g,
    check_indexability,
    closed_form_index,
    compute_index_table,
    index_by_bisection,
    subsidy_value_iteration,
)

__version__ = "0.1.0"
