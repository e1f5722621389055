"""From-scratch recurrent detector and its feedforward baseline."""
from .lstm import CellState, LstmParams, bptt, lstm_cell_forward, predict, sequence_forward
from .mlp import MlpParams, mlp_backprop, mlp_forward, mlp_predict
from .training import MLP_DEFAULTS, EpochRecord, TrainConfig, mlp_train, train

__all__ = [
    "CellState", "LstmParams", "bptt", "lstm_cell_forward", "predict", "sequence_forward",
    "MlpParams", "mlp_backprop", "mlp_forward", "mlp_predict",
    "MLP_DEFAULTS", "EpochRecord", "TrainConfig", "mlp_train", "train",
]
