"""Pilot run that fixes the stochastic-convergence acceptance threshold.

Run once, before the acceptance suite, with seeds disjoint from the ones
the acceptance test uses. The registered rule: the threshold is 1.5 times
the pilot's median L1 distance to the equilibrium after the final purchase.
The market, seeds and resulting threshold are written to
tests/data/pilot_threshold.json.
"""

import json
from pathlib import Path

import numpy as np

from trialoffer.dynamics import run_stochastic
from trialoffer.equilibrium import solve_tome
from trialoffer.market import MarketConfig

OUT = Path(__file__).resolve().parents[1] / "tests" / "data" / "pilot_threshold.json"

N_ITEMS = 10
R = 0.5
T = 200_000
MARKET_SEED = 2024
PILOT_SEEDS = list(range(1000, 1050))
FACTOR = 1.5


def pilot_market():
    rng = np.random.default_rng(MARKET_SEED)
    quality = rng.uniform(0.2, 0.9, N_ITEMS)
    return MarketConfig.homogeneous(np.ones(N_ITEMS), quality, R)


def main():
    cfg = pilot_market()
    phi = solve_tome(cfg).shares
    early, final = [], []
    for seed in PILOT_SEEDS:
        tr = run_stochastic(cfg, T_purchases=T, seed=seed, record_every=1000)
        dist = np.abs(tr.shares - phi).sum(axis=1)
        early.append(dist[tr.times == 1000][0])
        final.append(dist[-1])
    med_final = float(np.median(final))
    record = {
        "rule": f"threshold = {FACTOR} * pilot median L1 distance at t = {T}",
        "market": {"visibility": cfg.visibility[0].tolist(), "quality": cfg.quality[0].tolist(),
                   "feedback": R},
        "T": T,
        "pilot_seeds": PILOT_SEEDS,
        "pilot_median_distance_t1000": float(np.median(early)),
        "pilot_median_distance_final": med_final,
        "threshold": FACTOR * med_final,
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(record, indent=2) + "\n")
    print(json.dumps({k: record[k] for k in ("pilot_median_distance_t1000",
                                             "pilot_median_distance_final", "threshold")}))


if __name__ == "__main__":
    main()
