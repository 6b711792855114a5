"""plslab: small-scale noisy-label learning experiments.

Trains a classifier and an instance-dependent label-transition head with
EM-style objectives against per-sample partial-label priors, on synthetic
datasets with symmetric, asymmetric, or instance-dependent label noise.
"""

from .dataset import (Dataset, NoiseMeta, Sample, gen_gaussian_blobs,
                      inject_asymmetric, inject_idn, inject_symmetric,
                      load_csv, save_csv)
from .metrics import MetricsRecord, export_csv, split_uncertainty, test_accuracy, transition_mse
from .nn import Gradients, ModelParams, init_params, load_checkpoint, save_checkpoint, sgd_step
from .objective import BatchTrace, DivergenceError, InvariantMonitor, TrainConfig, total_loss, train
from .pls import (MixtureFit, PriorState, build_prior, coverage_uncertainty,
                  fit_loss_mixture, per_sample_loss, sample_coverage,
                  sample_uncertainty, update_moving_average)

__version__ = "0.1.0"
