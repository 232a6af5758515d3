"""Desk-scale lab for the robustness/accuracy trade-off of adversarial training.

Modules
-------
ndcore      dense networks with hand-written gradients
calib       classification-calibrated surrogate losses and the psi-transform
attacks     FGSM, PGD (FGSM^k) and the label-free pairwise attack
train       natural, robust-optimization and TRADES training
risk        natural / robust / boundary / surrogate risk evaluation
theory      analytic distributions, bound verification, tightness witness, SRM
data, checkpoint, csvio, config, cli
            datasets, checkpoint files, CSV tables, config files, command line
"""

__version__ = "0.1.0"

from .attacks import AttackConfig, AdvBatch, fgsm, pgd_label, pgd_pairwise, transfer_attack
from .calib import SurrogateLoss, get_loss, is_calibrated, psi_inverse, psi_transform
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, gen_synthetic, load_dataset_csv, load_idx
from .distributions import FiniteDistribution, StaircaseDistribution
from .estimators import SRMLinearSeparator, TradesClassifier
from .ndcore import LayerSpec, Model, build_layers, init_model
from .risk import RiskReport, evaluate
from .theory import (
    SrmConfig, staircase_errors, srm_linear_train, tightness_witness, verify_theorem1, verify_theorem1_finite,
)
from .train import Checkpoint, TrainConfig, train

__all__ = [
    "AttackConfig", "AdvBatch", "fgsm", "pgd_label", "pgd_pairwise", "transfer_attack",
    "SurrogateLoss", "get_loss", "is_calibrated", "psi_inverse", "psi_transform",
    "FiniteDistribution", "StaircaseDistribution",
    "LayerSpec", "Model", "build_layers", "init_model",
    "RiskReport", "evaluate",
    "Checkpoint", "TrainConfig", "train",
    "load_checkpoint", "save_checkpoint",
    "Dataset", "gen_synthetic", "load_dataset_csv", "load_idx",
    "SRMLinearSeparator", "TradesClassifier",
    "SrmConfig", "staircase_errors", "srm_linear_train", "tightness_witness", "verify_theorem1",
    "verify_theorem1_finite",
]
