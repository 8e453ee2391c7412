"""
Training the two estimators
===========================

One small network per concealment setting, each mapping (loss %, burst
length) to a quality score. Noise-free medians first, so the fit can be
judged against the function it is supposed to recover.
"""

import numpy as np

from sspesq.mlp import TrainingConfig, forward, split, train
from sspesq.oracle import SurrogateOracle, SurrogateParams, batch_assess, surrogate_base
from sspesq.table import aggregate
from sspesq.tracegen import config_grid

grid = [c for c in config_grid(400) if c.plc == 1]
records = batch_assess(grid, oracle=SurrogateOracle(SurrogateParams(noise_sigma=0.0)), seed=0)
data = split(aggregate(records), 0.8, seed=0)
print(len(data.train), "training points,", len(data.validation), "validation points")

model, history = train(data, TrainingConfig(max_epochs=20000))
print(f"best epoch {history.best_epoch}: train {history.best_train_error:.4f},"
      f" validation {history.best_validation_error:.4f}")

# compare against the smooth function behind the medians, on the grid only:
# small loss rates with long bursts never occur in a 400-packet trace
params = SurrogateParams()
for mlbs in (1.0, 3.0, 6.0):
    lr = np.array([c.lr_pct for c in grid if c.mlbs == mlbs], dtype=float)
    fit = forward(model, lr, np.full_like(lr, mlbs))
    truth = np.array([surrogate_base(x, mlbs, 1, params) for x in lr])
    print(f"mlbs={mlbs}: max |fit - truth| = {np.max(np.abs(fit - truth)):.3f}")
