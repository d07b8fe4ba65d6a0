"""Two-channel transformer for short- and long-term 3D human motion
forecasting: a tape-based autodiff core, axis-angle kinematics, CSV
motion datasets, the dual-channel attention model, occlusion recovery,
and a training/evaluation toolkit with a CLI front end.
"""

from .dataset import (DatasetSpec, MotionSequence, MotionWindow,
                      build_padded_input, load_csv_sequence, load_dataset,
                      save_csv_sequence, synth_generate, window_split)
from .kinematics import (euler_mse, euler_to_rotmat, expmap_to_rotmat,
                         rotmat_to_euler, wrap_angle)
from .model import (ModelConfig, TwoChannelTransformer, init_model,
                    load_checkpoint, model_forward, param_count, predict,
                    save_checkpoint)
from .occlusion import (OcclusionMask, OcclusionSpec, RecoveryError,
                        apply_mask, gen_joint_dropout, gen_time_consistent,
                        recover_autoregressive, recover_linear_interp,
                        recover_short_term)
from .tensor import Tensor, backward, grad_check, no_tape
from .trainer import (EvalReport, TrainConfig, benchmark_inference,
                      evaluate_mse_horizons, loss_fn, occlusion_eval,
                      train_loop)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "grad_check", "no_tape",
    "expmap_to_rotmat", "rotmat_to_euler", "euler_to_rotmat", "wrap_angle",
    "euler_mse",
    "MotionSequence", "MotionWindow", "DatasetSpec", "load_csv_sequence",
    "save_csv_sequence", "load_dataset", "window_split", "build_padded_input",
    "synth_generate",
    "ModelConfig", "TwoChannelTransformer", "init_model", "model_forward",
    "predict", "param_count", "save_checkpoint", "load_checkpoint",
    "OcclusionMask", "OcclusionSpec", "RecoveryError", "gen_time_consistent",
    "gen_joint_dropout", "apply_mask", "recover_linear_interp",
    "recover_short_term", "recover_autoregressive",
    "TrainConfig", "EvalReport", "loss_fn", "train_loop",
    "evaluate_mse_horizons", "occlusion_eval", "benchmark_inference",
    "__version__",
]
