"""Mixed-type tabular imputation with hypergraph message passing."""

from .tabular import ColumnKind, Table, fit_scalers, apply_scalers, invert_scalers, load_csv, write_csv
from .masking import MissSpec, mask_mcar, mask_mar, mask_mnar, progressive_mask
from .hypergraph import Hypergraph, construct_hypergraph
from .model import ModelState
from .train import TrainConfig, pretrain, finetune
from .infer import impute

__all__ = [
    "ColumnKind", "Table", "fit_scalers", "apply_scalers", "invert_scalers",
    "load_csv", "write_csv", "MissSpec", "mask_mcar", "mask_mar", "mask_mnar",
    "progressive_mask", "Hypergraph", "construct_hypergraph", "ModelState",
    "TrainConfig", "pretrain", "finetune", "impute",
]

__version__ = "0.1.0"
