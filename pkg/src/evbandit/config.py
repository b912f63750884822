"""JSON run configuration with strict schema checking.

Unknown keys are rejected everywhere so a typo fails loudly instead of
silently falling back to a default.  Defaults mirror the constant-cost
benchmark setup: N=10, M=5, beta=0.999, T_max=12, B_max=9, quadratic
penalty 0.2 B^2, uniform feasible arrivals at rho=0.7, constant cost 0.5.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ArrivalModel, CostChain, Instance, PenaltyFunction

__all__ = ["ConfigError", "RunConfig", "load_run_config", "load_instance", "instance_from_dict"]


class ConfigError(ValueError):
    """A malformed or contradictory configuration document."""


@dataclass
class RunConfig:
    instance: Instance
    policies: list
    seeds: list
    horizon: int | None
    baseline: str | None
    truncation_tol: float
    verify_oracle: bool


_INSTANCE_KEYS = {
    "n_chargers",
    "capacity",
    "discount",
    "t_max",
    "b_max",
    "penalty",
    "arrivals",
    "cost",
}
_RUN_KEYS = {
    "instance",
    "policies",
    "seeds",
    "horizon",
    "baseline",
    "truncation_tol",
    "verify_oracle",
}


def _check_keys(block: dict, allowed: set, where: str) -> None:
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(block) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(extra)}")


def _penalty_from(block, b_max: int) -> PenaltyFunction:
    _check_keys(block, {"quadratic", "table"}, "penalty")
    if ("quadratic" in block) == ("table" in block):
        raise ConfigError("penalty needs exactly one of 'quadratic' or 'table'")
    try:
        if "quadratic" in block:
            return PenaltyFunction.quadratic(float(block["quadratic"]), b_max)
        return PenaltyFunction(np.asarray(block["table"], dtype=float))
    except ValueError as e:
        raise ConfigError(f"bad penalty: {e}") from e


def _arrivals_from(block, t_max: int, b_max: int) -> ArrivalModel:
    _check_keys(block, {"rho", "n_periods", "kind", "pmf"}, "arrivals")
    rho = block.get("rho", 0.7)
    n_periods = int(block.get("n_periods", 1))
    kind = block.get("kind", "uniform_feasible")
    try:
        if "pmf" in block:
            if kind != "uniform_feasible" and kind != "explicit":
                raise ConfigError(f"unknown arrivals kind {kind!r}")
            pmf = np.asarray(block["pmf"], dtype=float)
            return ArrivalModel(n_periods=n_periods, rho=rho, pmf=pmf)
        if kind != "uniform_feasible":
            raise ConfigError(f"unknown arrivals kind {kind!r} (or supply an explicit pmf)")
        return ArrivalModel.uniform_feasible(t_max, b_max, rho, n_periods)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"bad arrivals: {e}") from e


def _cost_from(block, base_dir: Path) -> CostChain:
    _check_keys(
        block,
        {"constant", "levels", "matrix", "matrices", "file", "k", "slot_minutes", "alpha",
         "retail_price", "n_periods"},
        "cost",
    )
    modes = [name for name in ("constant", "levels", "file") if name in block]
    if len(modes) != 1:
        raise ConfigError("cost needs exactly one of 'constant', 'levels', or 'file'")
    try:
        if "constant" in block:
            return CostChain.constant(float(block["constant"]))
        if "levels" in block:
            levels = np.asarray(block["levels"], dtype=float)
            if ("matrix" in block) == ("matrices" in block):
                raise ConfigError("cost with levels needs 'matrix' or per-period 'matrices'")
            if "matrix" in block:
                return CostChain(values=levels, P=np.asarray(block["matrix"], dtype=float))
            return CostChain(
                values=levels, P_per_period=np.asarray(block["matrices"], dtype=float)
            )
        from .costfit import PriceTrace, fit_cost_chain

        path = Path(block["file"])
        if not path.is_absolute():
            path = base_dir / path
        fit = fit_cost_chain(
            PriceTrace.from_csv(path),
            k=int(block.get("k", 5)),
            slot_minutes=float(block.get("slot_minutes", 60.0)),
            alpha=float(block.get("alpha", 0.5)),
            retail_price=block.get("retail_price"),
            n_periods=block.get("n_periods"),
        )
        return fit.chain
    except ConfigError:
        raise
    except (ValueError, OSError) as e:
        raise ConfigError(f"bad cost: {e}") from e


def instance_from_dict(block: dict, base_dir: Path | None = None) -> Instance:
    _check_keys(block, _INSTANCE_KEYS, "instance")
    base_dir = Path(".") if base_dir is None else base_dir
    t_max = int(block.get("t_max", 12))
    b_max = int(block.get("b_max", 9))
    penalty = _penalty_from(block.get("penalty", {"quadratic": 0.2}), b_max)
    arrivals = _arrivals_from(block.get("arrivals", {}), t_max, b_max)
    cost = _cost_from(block.get("cost", {"constant": 0.5}), base_dir)
    try:
        return Instance(
            n_chargers=int(block.get("n_chargers", 10)),
            capacity=int(block.get("capacity", 5)),
            discount=float(block.get("discount", 0.999)),
            t_max=t_max,
            b_max=b_max,
            penalty=penalty,
            arrivals=arrivals,
            cost=cost,
        )
    except ValueError as e:
        raise ConfigError(f"bad instance: {e}") from e


def load_instance(path) -> Instance:
    return load_run_config(path).instance


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    _check_keys(doc, _RUN_KEYS, "config")
    inst = instance_from_dict(doc.get("instance", {}), path.parent)

    policies = doc.get("policies", ["whittle+lllp", "edf", "llf"])
    if not isinstance(policies, list) or not all(isinstance(p, str) for p in policies):
        raise ConfigError("policies must be a list of names")
    seeds = doc.get("seeds", 20)
    if isinstance(seeds, int):
        seeds = list(range(seeds))
    elif isinstance(seeds, list) and all(isinstance(s, int) for s in seeds):
        seeds = list(seeds)
    else:
        raise ConfigError("seeds must be an int count or a list of ints")
    horizon = doc.get("horizon")
    if horizon is not None:
        horizon = int(horizon)
        if horizon < 1:
            raise ConfigError("horizon must be >= 1")
    baseline = doc.get("baseline")
    if baseline is not None and baseline not in policies:
        raise ConfigError("baseline must be one of the configured policies")
    tol = float(doc.get("truncation_tol", 1e-3))
    if tol <= 0:
        raise ConfigError("truncation_tol must be positive")
    return RunConfig(
        instance=inst,
        policies=policies,
        seeds=seeds,
        horizon=horizon,
        baseline=baseline,
        truncation_tol=tol,
        verify_oracle=bool(doc.get("verify_oracle", False)),
    )
