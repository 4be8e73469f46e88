"""OFDM link simulation and pilot-based channel estimation with the HA02 network.

Submodules
----------
numerics
    Small reverse-mode autodiff engine used to train the network.
ofdm, channel, simulation
    Resource grids, OFDM modulation, ETU Rayleigh fading and slot simulation.
estimators
    LS with bilinear interpolation and frequency-domain MMSE.
model, estimator
    The HA02 network, its weight file, and a scikit-learn style wrapper.
training, evaluation
    Datasets, Adam training loop, sweeps, pruning and result files.
"""

from .channel import FadingConfig, PowerDelayProfile, etu_profile
from .estimator import HA02Regressor
from .estimators import FDMMSEEstimator, LSBilinearEstimator, bilinear_full_grid, ls_estimate, mmse_estimate
from .evaluation import denoising_gain, mse_metric, prune_weights, sweep_doppler, sweep_snr
from .model import Ha02Config, ha02_forward, init_params, load_weights, save_weights
from .ofdm import FrameConfig
from .simulation import simulate_slot, slot_rng
from .training import TrainConfig, generate_dataset, train

__version__ = "0.1.0"

__all__ = [
    "FDMMSEEstimator",
    "FadingConfig",
    "FrameConfig",
    "HA02Regressor",
    "Ha02Config",
    "LSBilinearEstimator",
    "PowerDelayProfile",
    "TrainConfig",
    "bilinear_full_grid",
    "denoising_gain",
    "etu_profile",
    "generate_dataset",
    "ha02_forward",
    "init_params",
    "load_weights",
    "ls_estimate",
    "mmse_estimate",
    "mse_metric",
    "prune_weights",
    "save_weights",
    "simulate_slot",
    "slot_rng",
    "sweep_doppler",
    "sweep_snr",
    "train",
]
