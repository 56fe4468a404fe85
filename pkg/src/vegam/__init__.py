"""Fixation-supervised CNN training with class activation maps, in numpy."""
from .cam import CamMap, cam_from_dense_weights, explain, grad_cam, modified_grad_cam
from .gaze import Fixation, FixationMap, GazeSample, fixation_map, ivt_extract
from .model import Model, ModelConfig, build_model, forward, load_checkpoint, save_checkpoint
from .stats import ContingencyTable, mcnemar, weight_stats, zero_map_probs
from .training import TrainConfig, evaluate, train_baseline, train_vegam

__version__ = "0.1.0"
