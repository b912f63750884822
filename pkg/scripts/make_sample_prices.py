#!/usr/bin/env python3
"""Generate the checked-in synthetic real-time price trace.

30 days of hourly prices with a daily shape (overnight valley, evening peak),
AR(1) noise, and occasional scarcity spikes.  Deterministic: fixed seed, so
the CSV in data/ is reproducible byte for byte.
"""

from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent.parent / "data" / "sample_rt_prices.csv"
SEED = 20260815
DAYS = 30

daily_shape = np.array(
    [20, 18, 17, 17, 18, 21, 28, 38, 42, 40, 36, 34,
     33, 34, 38, 46, 62, 150, 210, 230, 190, 60, 30, 23],
    dtype=float,
)


def main() -> None:
    rng = np.random.default_rng(SEED)
    n = DAYS * 24
    hours = np.arange(n)
    base = daily_shape[hours % 24]
    weekly = 1.0 + 0.08 * np.sin(2 * np.pi * hours / (24 * 7))

    ar = np.empty(n)
    ar[0] = 0.0
    eps = rng.normal(0.0, 5.0, size=n)
    for t in range(1, n):
        ar[t] = 0.82 * ar[t - 1] + eps[t]

    # scarcity spikes cluster in the evening ramp but can hit any hour
    spikes = np.zeros(n)
    evening = np.isin(hours % 24, [17, 18, 19, 20])
    p_spike = np.where(evening, 0.35, 0.015)
    spike_hours = rng.random(n) < p_spike
    spikes[spike_hours] = rng.gamma(2.0, 120.0, size=int(spike_hours.sum()))

    prices = np.maximum(base * weekly + ar + spikes, 5.0).round(2)

    start = datetime(2026, 1, 1)
    OUT.parent.mkdir(parents=True, exist_ok=True)
    with open(OUT, "w", newline="") as fh:
        fh.write("timestamp,price\n")
        for t in range(n):
            ts = (start + timedelta(hours=int(t))).isoformat()
            fh.write(f"{ts},{prices[t]:.2f}\n")
    print(f"wrote {n} samples to {OUT}")


if __name__ == "__main__":
    main()
