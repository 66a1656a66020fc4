from .metrics import auc, binary_auc, macro_f1, predict
from .optim import AdamW, OptimizerError, clip_gradients, global_norm
from .schedule import PlateauSchedule

__all__ = ["AdamW", "OptimizerError", "PlateauSchedule", "auc", "binary_auc", "clip_gradients", "global_norm",
           "macro_f1", "predict"]
