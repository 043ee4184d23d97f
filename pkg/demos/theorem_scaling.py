"""How fast does SGD concentrate onto the deterministic flow?

The order parameters of a finite-N simulation deviate from the N -> infinity
ODE trajectory by an amount that shrinks roughly like 1/sqrt(N). This script
measures the maximum deviation over a fixed alpha-horizon for several N,
averages over seeds, and fits the log-log slope.

Run time: about a minute.
"""

import numpy as np

from committee_flow import Activation, TrainConfig, theorem1_deviation

cfg = TrainConfig(N=250, M=2, K=2, activation=Activation.ERF, eta_w=0.1,
                  steps=0, seed=0)

n_list = [250, 500, 1000, 2000, 4000]
results = theorem1_deviation(cfg, n_list, horizon=2.0, seeds=8)

print("max deviation of the order parameters from the ODE (horizon alpha=2):")
print(f"{'N':>6} {'deviation':>12}")
for n, dev in results:
    print(f"{n:6d} {dev:12.5f}")

ns = np.array([n for n, _ in results], dtype=float)
devs = np.array([d for _, d in results])
slope = np.polyfit(np.log(ns), np.log(devs), 1)[0]
print(f"\nfitted log-log slope: {slope:.3f}  (concentration predicts about -0.5)")
