"""xLSTM (sLSTM and mLSTM cells, residual blocks, stacked models) in numpy."""
from .blocks import (ModelParams, StackConfig, count_params, init_model, load_checkpoint,
                     model_backward, model_forward, save_checkpoint, slstm_positions)
from .mlstm import MLstmConfig, init_mlstm, mlstm_parallel_forward, mlstm_recurrent_forward, mlstm_step
from .slstm import SLstmConfig, init_slstm, slstm_backward, slstm_forward, slstm_step
from .tasks import TaskConfig, gen_mqar, gen_nns, gen_parity, scaled_accuracy
from .training import ScheduleConfig, adamw_step, lr_at, masked_cross_entropy, mse_loss

__all__ = [
    "ModelParams", "StackConfig", "count_params", "init_model", "load_checkpoint", "model_backward",
    "model_forward", "save_checkpoint", "slstm_positions", "MLstmConfig", "init_mlstm",
    "mlstm_parallel_forward", "mlstm_recurrent_forward", "mlstm_step", "SLstmConfig", "init_slstm",
    "slstm_backward", "slstm_forward", "slstm_step", "TaskConfig", "gen_mqar", "gen_nns", "gen_parity",
    "scaled_accuracy", "ScheduleConfig", "adamw_step", "lr_at", "masked_cross_entropy", "mse_loss",
]
