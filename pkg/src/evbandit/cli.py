"""Command-line interface: index tables, simulations, bounds, cost fitting.

Exit codes: 0 success, 2 configuration error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .bound import solve_bound
from .config import ConfigError, load_run_config
from .costfit import PriceTrace, fit_cost_chain
from .sim import monte_carlo
from .whittle import compute_index_table, index_by_bisection, ExtendedState

ORACLE_TOL = 1e-6


class VerificationError(RuntimeError):
    pass


def _out_dir(arg) -> Path:
    out = Path(arg) if arg else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_index(args) -> int:
    cfg = load_run_config(args.config)
    inst = cfg.instance
    t0 = time.time()
    table = compute_index_table(inst)
    dt = time.time() - t0
    n_states = table.values.size
    print(f"index table: {n_states} states "
          f"(T<={inst.t_max}, B<={inst.b_max}, K={inst.cost.n_levels}, "
          f"periods={inst.n_periods}) in {dt:.2f}s")
    out = _out_dir(args.out)
    table.to_csv(out / "index_table.csv")
    table.to_json(out / "index_table.json")
    print(f"wrote {out / 'index_table.csv'}")

    if args.verify_oracle or cfg.verify_oracle:
        states = [
            ExtendedState(t, b, j, tau)
            for t in range(1, inst.t_max + 1)
            for b in range(inst.b_max + 1)
            for j in range(inst.cost.n_levels)
            for tau in range(inst.n_periods)
        ]
        if len(states) > 60:
            rng = np.random.default_rng(0)
            states = [states[i] for i in rng.choice(len(states), 60, replace=False)]
        worst = 0.0
        for st in states:
            ref = index_by_bisection(inst, st, tol=1e-8)
            err = abs(table.lookup(st.T, st.B, st.j, st.tau) - ref)
            worst = max(worst, err)
        print(f"oracle check on {len(states)} states: max |err| = {worst:.2e}")
        if worst > ORACLE_TOL:
            raise VerificationError(
                f"index table disagrees with the bisection oracle ({worst:.2e} > {ORACLE_TOL})"
            )
    return 0


def cmd_simulate(args) -> int:
    cfg = load_run_config(args.config)
    seeds = list(range(args.seeds)) if args.seeds is not None else cfg.seeds
    baseline = args.paired_baseline or cfg.baseline
    if baseline is not None and baseline not in cfg.policies:
        raise ConfigError("paired baseline must be one of the configured policies")
    t0 = time.time()
    report = monte_carlo(
        cfg.instance,
        cfg.policies,
        seeds,
        horizon=cfg.horizon,
        baseline=baseline,
        truncation_tol=cfg.truncation_tol,
    )
    print(f"simulated {len(cfg.policies)} policies x {len(seeds)} seeds "
          f"x {report.horizon} slots in {time.time() - t0:.1f}s")
    out = _out_dir(args.out)
    report.to_csv(out / "episodes.csv")
    report.to_json(out / "summary.json")
    for p in report.policies:
        mean, half = report.mean_ci(p)
        line = f"  {p:14s} {mean:12.3f} +- {half:.3f}"
        if baseline and p != baseline:
            d, dh = report.paired(p)
            line += f"   vs {baseline}: {d:+.3f} +- {dh:.3f}"
        print(line)
    print(f"wrote {out / 'episodes.csv'} and {out / 'summary.json'}")
    return 0


def cmd_bound(args) -> int:
    cfg = load_run_config(args.config)
    method = "both" if args.verify_oracle else "dual"
    t0 = time.time()
    try:
        res = solve_bound(cfg.instance, method=method, details=True)
    except RuntimeError as e:
        raise VerificationError(str(e)) from e
    doc = {
        "bound": res.value,
        "per_charger": res.value / cfg.instance.n_chargers,
        "lambda": res.lam,
        "activation_frequency": res.activation_frequency,
        "method": res.method,
    }
    if res.lp_value is not None:
        doc["lp_value"] = res.lp_value
    if res.dual_value is not None:
        doc["dual_value"] = res.dual_value
    out = _out_dir(args.out)
    (out / "bound.json").write_text(json.dumps(doc, indent=1) + "\n")
    print(f"bound {res.value:.6f} (lambda={res.lam:.6f}) in {time.time() - t0:.2f}s")
    print(f"wrote {out / 'bound.json'}")
    return 0


def cmd_fitcost(args) -> int:
    try:
        trace = PriceTrace.from_csv(args.trace)
        fit = fit_cost_chain(
            trace,
            k=args.k,
            slot_minutes=args.slot_minutes,
            alpha=args.alpha,
            retail_price=args.retail_price,
            n_periods=args.n_periods,
        )
    except (ValueError, OSError) as e:
        raise ConfigError(str(e)) from e
    chain = fit.chain
    doc = {"levels": chain.values.tolist(), "retail_price": fit.retail_price}
    if chain.P is not None:
        doc["matrix"] = chain.P.tolist()
    else:
        doc["matrices"] = chain.P_per_period.tolist()
    out = _out_dir(args.out)
    (out / "cost_chain.json").write_text(json.dumps(doc, indent=1) + "\n")
    print(f"fitted {args.k}-state chain from {len(fit.states)} slots "
          f"(retail price {fit.retail_price:.4f})")
    print(f"wrote {out / 'cost_chain.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evbandit",
        description="EV-charging scheduling: index tables, simulations, bounds, cost fitting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="precompute the activation index table")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (default .)")
    p.add_argument("--verify-oracle", action="store_true",
                   help="cross-check against the bisection oracle")
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("simulate", help="run the policy bake-off")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seeds", type=int, default=None, help="override the seed count")
    p.add_argument("--paired-baseline", default=None)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("bound", help="compute the relaxation upper bound")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--verify-oracle", action="store_true",
                   help="also solve the occupancy LP and cross-check")
    p.set_defaults(fn=cmd_bound)

    p = sub.add_parser("fitcost", help="fit a cost chain from a price trace CSV")
    p.add_argument("--trace", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--slot-minutes", type=float, default=60.0)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--retail-price", type=float, default=None)
    p.add_argument("--n-periods", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_fitcost)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except VerificationError as e:
        print(f"verification failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
