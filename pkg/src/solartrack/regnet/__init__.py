"""Deep regression tracker: network, crops, training, checkpoints."""

from .checkpoint import Checkpoint, load as load_checkpoint, save as save_checkpoint
from .crops import CropSampler, crop_pair, laplace_sample
from .network import (
    RegNetConfig,
    RegNetParams,
    backward,
    forward,
    init_params,
    loss,
    sgd_step,
    zero_params,
)
from .tracker import RegNetTracker, regnet_tracker
from .training import TrainConfig, train
