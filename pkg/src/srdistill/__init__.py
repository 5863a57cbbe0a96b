"""srdistill: adaptive contrastive distillation for super-resolution.

A compact teacher/student training framework: residual SR networks with
three feature taps, per-sample adaptive gating of the teacher signal,
a contrastive feature-matching loss with in-batch negatives, and a
deterministic training/evaluation pipeline.
"""

from .data import (AUG_CODES, ImageSet, PatchBatch, apply_augmentation,
                   invert_augmentation, load_image_set, sample_batch,
                   synth_lr, upscale_bicubic)
from .errors import (CheckpointMismatch, ConfigError, DataError, DecodeError,
                     EmptyDirectory, ImageTooSmall, NonFiniteLoss, ShapeError)
from .evaluation import (BicubicUpscaler, EvalReport, GroundTruthOracle,
                         evaluate, rgb_to_y, teacher_worse_rate, y_psnr)
from .losses import (LossBreakdown, LossConfig, adaptive_indicator, facd_loss,
                     icd_loss, image_loss, image_loss_terms,
                     normalize_features, plain_fd_loss, total_loss)
from .models import (EDSR, RCAN, EdsrConfig, RcanConfig, Regressor,
                     build_edsr, build_model, build_rcan, build_regressor,
                     default_res_scaling, forward_with_taps, init_identity_,
                     init_weights_, param_count, tap_indices)
from .train import (MODES, Components, FitResult, TrainConfig, TrainState,
                    derive_seed, expand_axis, fit, lr_at_epoch,
                    mode_components, run_ablation, train_step)

__version__ = "0.1.0"
