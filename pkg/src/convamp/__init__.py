"""Layered signal recovery under convolutional and dense Gaussian sensing,
with matching scalar state evolution."""

from .amp import (AmpDivergedError, AmpEstimator, AmpState, AmpTrace, amp_step,
                  init_amp, mse, run_amp)
from .channels import (AwgnChannel, DenoiserOutput, GaussBernoulliPrior,
                       GaussianPrior, IdentityChannel, ReluChannel)
from .network import GroundTruth, LayerSpec, NetworkSpec, generate_instance
from .operators import (DenseOperator, MccOperator, PermutationPair,
                        build_permutations, check_block_circulant,
                        load_operator, sample_conv_filter,
                        sample_dense_gaussian, sample_mcc, save_operator)
from .state_evolution import (SeParams, SeState, SeTrace, compute_tau, se_init,
                              se_run, se_step)

__all__ = [
    "AmpDivergedError", "AmpEstimator", "AmpState", "AmpTrace", "amp_step",
    "init_amp", "mse", "run_amp",
    "AwgnChannel", "DenoiserOutput", "GaussBernoulliPrior", "GaussianPrior",
    "IdentityChannel", "ReluChannel",
    "GroundTruth", "LayerSpec", "NetworkSpec", "generate_instance",
    "DenseOperator", "MccOperator", "PermutationPair", "build_permutations",
    "check_block_circulant", "load_operator", "sample_conv_filter",
    "sample_dense_gaussian", "sample_mcc", "save_operator",
    "SeParams", "SeState", "SeTrace", "compute_tau", "se_init", "se_run",
    "se_step",
]

__version__ = "0.1.0"
