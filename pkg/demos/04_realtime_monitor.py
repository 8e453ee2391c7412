"""
Watching a live stream
======================

Replay a synthetic 20 ms packet stream through the receiver-side estimator.
The path gets worse halfway through and the estimate follows.
"""

import numpy as np

from sspesq.gilbert import params_from_config, simulate
from sspesq.mlp import TrainingConfig, split, train
from sspesq.oracle import SurrogateOracle, SurrogateParams, batch_assess
from sspesq.realtime import PacketEvent, run_stream
from sspesq.table import aggregate
from sspesq.tracegen import config_grid

# quick models; see 03_train_networks.py for the full treatment
tc = TrainingConfig(max_epochs=3000)
models = {}
for plc in (0, 1):
    grid = [c for c in config_grid(400) if c.plc == plc]
    stats = aggregate(batch_assess(grid, traces_per_config=3,
                                   oracle=SurrogateOracle(SurrogateParams(noise_sigma=0.0)), seed=5))
    models[plc], _ = train(split(stats, 0.8, seed=5), tc)

# 30 s of clean-ish network, then 30 s of heavy bursty loss
lost = np.concatenate([simulate(params_from_config(0.02, 1.0), 1500, seed=1).bits,
                       simulate(params_from_config(0.20, 3.0), 1500, seed=2).bits])
rng = np.random.default_rng(3)
events = [PacketEvent((i + 64000) % 65536, 20.0 * i + rng.uniform(0, 15))  # wraps early on
          for i in np.flatnonzero(lost == 0)]
events.sort(key=lambda e: e.recv_time)

result = run_stream(events, models[0], models[1], plc=1)
print("time_ms,lr,mlbs,mos,flags")
for line in result.lines[::5]:
    print(line)
print(result.counters)
