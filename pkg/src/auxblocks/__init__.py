"""Self-ensemble defense against adversarial examples.

A single jointly trained network grows auxiliary classifier heads on
intermediate feature maps; at inference the heads vote (or sum scores),
and the head parameters can be withheld from attackers. Includes the
attack suite (FGSM, PGD, CW-L2, boundary, and the adaptive variants that
target the combined defense loss), an adversarial-training baseline, and
the evaluation harness that reproduces the headline experiments.
"""

from .adv_training import ATConfig, adv_train_epoch
from .attacks import AdvBatch, AttackConfig, adp_fgsm, adp_loss, adp_pgd, boundary_attack, \
    cw_l2, fgsm, per_block_attack, pgd, run_attack
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, load_cifar10_batches, load_mnist, load_mnist_idx, synthetic_dataset
from .ensemble import EnsembleConfig, Prediction, accuracy, joint_loss, predict, \
    predict_score, predict_vote, train_epoch
from .estimators import AuxBlockClassifier
from .evaluation import EvalReport, EvalRow, ThreatModel, adaptive_eval, block_position_study, \
    emit_report, epsilon_sweep, loss_ratio_experiment, static_eval
from .models import AuxSpec, Model, ModelSpec, attach_aux, build_aux_spec, build_lenet5, \
    build_model, build_vgg_config, lenet5_aux, vgg16_with_blocks
from .optim import SGD
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "ATConfig", "AdvBatch", "AttackConfig", "AuxBlockClassifier", "AuxSpec", "Dataset",
    "EnsembleConfig", "EvalReport", "EvalRow", "Model", "ModelSpec", "Prediction", "SGD",
    "Tensor", "ThreatModel", "accuracy", "adaptive_eval", "adp_fgsm", "adp_loss", "adp_pgd",
    "adv_train_epoch", "attach_aux", "block_position_study", "boundary_attack",
    "build_aux_spec", "build_lenet5", "build_model", "build_vgg_config", "cw_l2",
    "emit_report", "epsilon_sweep", "fgsm", "joint_loss", "lenet5_aux", "load_checkpoint",
    "load_cifar10_batches", "load_mnist", "load_mnist_idx", "loss_ratio_experiment",
    "no_grad", "per_block_attack", "pgd", "predict", "predict_score", "predict_vote",
    "run_attack", "save_checkpoint", "static_eval", "synthetic_dataset", "train_epoch",
    "vgg16_with_blocks",
]
