"""
Bursty loss traces
==================

A two-state chain where the bad state always drops the packet. Pick a loss
rate and a mean burst length, get the transition probabilities, run it.
"""

import numpy as np

from sspesq.gilbert import empirical_stats, params_from_config, simulate

# 10% loss in bursts of two packets on average
params = params_from_config(0.10, 2.0)
print("p =", params.p, " q =", params.q)

trace = simulate(params, 60, seed=7)
print("".join(map(str, trace.bits)))

# the long-run statistics land close to the targets
for lr, mlbs in [(0.05, 1.0), (0.10, 2.0), (0.30, 6.0)]:
    s = empirical_stats(simulate(params_from_config(lr, mlbs), 10**6, seed=1))
    print(f"target lr={lr:.2f} mlbs={mlbs:.1f}   got lr={s.loss_rate:.4f} mlbs={s.mlbs:.3f}")

# short traces wander a lot; that is why the generator verifies them
short = [empirical_stats(simulate(params, 400, seed=s)).loss_rate for s in range(200)]
print("400-packet loss rate spread:", np.percentile(short, [5, 50, 95]).round(3))
