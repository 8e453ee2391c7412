"""Reference-free speech quality estimation for VoIP streams.

Bursty packet loss is simulated with a simplified Gilbert model, scored by a
full-reference quality oracle, condensed into per-configuration medians and
learned by two small feed-forward networks (one per concealment setting) that
can then score a live packet stream from loss statistics alone.

Submodules:

- ``gilbert``: loss model, trace simulation and burst statistics.
- ``tracegen``: configuration grid, feasibility and verified traces.
- ``oracle``: synthetic surrogate and external PESQ adapter, batch scoring.
- ``table``: large-table records and compact per-configuration statistics.
- ``mlp``: the 2-30-1 perceptron, backpropagation and training.
- ``metrics``: whole-table MSE/MAE of trained networks.
- ``realtime``: sliding-window estimator over packet arrivals.
- ``cli``: ``sspesq`` command line driving the pipeline.
"""

__version__ = "0.1.0"

from .gilbert import (BurstStats, GilbertParams, LossTrace, empirical_stats,
                      params_from_config, simulate)
from .tracegen import NetworkConfig, VerificationPolicy, config_grid, feasible, generate_verified
from .table import ConfigStats, SampleRecord, aggregate, median
from .oracle import SurrogateOracle, SurrogateParams, batch_assess, surrogate_assess
from .mlp import MlpModel, TrainingConfig, forward, split, train
from .metrics import MetricsReport, full_table_errors
from .realtime import Estimator, PacketEvent, QualityEstimate, WindowStats
