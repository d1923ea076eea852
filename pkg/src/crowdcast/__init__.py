"""Masked crowd-density completion for robust crowd density forecasting.

Pipeline: rasterize pedestrian trajectories into density-map sequences,
tokenize them into space-time cubes, train a small masked-autoencoder
transformer under temporal-density-aware multi-task masking, and evaluate
forecasting quality and miss-detection robustness with JS-divergence metrics.
"""

__version__ = "0.1.0"

from .density import (MetricReport, js_divergence, kl_divergence, normalize_map,
                      rasterize_frame, rasterize_sequence, score_forecast)
from .masking import (MaskPlan, MaskTask, TDMConfig, build_mask_plan, dm_probabilities,
                      frame_mask, inference_mask, sample_lambda, sample_task,
                      sample_tdm_slice, tm_ratio)
from .model import (DensityMAE, ModelConfig, ModelState, build_model, embed_tokens,
                    forward, grad_check, masked_mse_loss, position_embedding,
                    predict_future)
from .simdata import (CorruptionSpec, SimConfig, TrajectoryDataset, Window,
                      corrupt_missdetect, load_trajectories, save_trajectories,
                      simulate_crowd, window_split)
from .tokenizer import CubeGrid, TokenField, TokenLayout, accumulated_density, cubify, decubify
from .training import AugmentPolicy, TrainConfig, augment, train
