from .checkpoint import load_model, save_model
from .data import (SubjectData, TensorPair, assemble_t2t_dataset, augment, make_pair,
                   split_subjects, transform_pair)
from .gradcheck import gradient_gate, run_gradient_gate
from .networks import PatchCritic, UNet
from .normalization import NormStats, compute_norm_stats
from .training import (DenoiserModel, TrainConfig, TrainResult, ensemble_predict, forward,
                       loss_l1, train)

__all__ = [
    "DenoiserModel", "NormStats", "PatchCritic", "SubjectData", "TensorPair", "TrainConfig",
    "TrainResult", "UNet", "assemble_t2t_dataset", "augment", "compute_norm_stats",
    "ensemble_predict", "forward", "gradient_gate", "load_model", "loss_l1", "make_pair",
    "run_gradient_gate", "save_model", "split_subjects", "train", "transform_pair",
]
