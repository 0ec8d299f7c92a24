"""facedet: a single-stage, scale-invariant face detector toolkit.

Three detection heads read backbone features at strides 8, 16 and 32 and
classify/regress square anchors in one forward pass; training uses
IoU-threshold assignment, per-head hard example mining and a multi-task
loss with exact gradients. The package is desk scale: it trains on
synthetic scenes and verifies itself with oracle-backed property tests.
"""

from .anchors import AnchorConfig, AnchorSet, cross_boundary_mask, generate
from .boxcodec import decode, encode
from .config import InferConfig, RunConfig, default_config, load_config, save_config, toy_config
from .errors import ConfigError, FacedetError, TrainingDiverged
from .evalap import GroundTruthDB, PRCurve, average_precision, match_detections
from .geometry import Box, clip, clip_boxes, iou, iou_matrix
from .inference import (
    DEFAULT_PYRAMID,
    DetectionSet,
    PyramidLevel,
    PyramidPlan,
    detect_single_scale,
    nms,
    pyramid_detect,
    single_scale_factor,
)
from .losses import LossValue, ModuleLossInput, classification_loss, regression_loss, total_loss
from .matching import LABEL_IGNORE, LABEL_NEGATIVE, LABEL_POSITIVE, MatchResult, assign
from .network import BackboneConfig, DetectionModuleOutput, DetectionNetwork
from .sampler import OhemConfig, select
from .synthdata import SynthConfig, generate_dataset
from .training import TrainConfig, evaluate_toy, learning_rate_at, sgd_step, train

__version__ = "0.1.0"
