"""Fixed repetition and adaptive computation time for small recurrent networks."""
from .adaptive import (
    ActConfig,
    HaltingRecord,
    HaltingTrace,
    RepeatConfig,
    act_rollout,
    act_schedule,
    augment_input,
    mean_repetitions,
    ponder_loss,
    repeat_expand,
    repeat_rollout,
)
from .autodiff import DimensionError, NonFiniteError, ParamStore, Tensor, backward, grad_check
from .cells import CellState, Linear, LstmParams, RnnParams, lstm_step, readout, rnn_step
from .config import ConfigError, ExperimentConfig
from .training import MetricsRecord, Model, TrainReport, evaluate, sgd_update, train_run

__version__ = "0.1.0"
