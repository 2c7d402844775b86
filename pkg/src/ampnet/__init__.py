"""Block compressed sensing with classical AMP and the unrolled AMP-Net / AMPA-Net."""

from .amp import TransformD, amp_reconstruct, pinv_apply, soft_threshold
from .checkpoint import Checkpoint, load_checkpoint, model_from_checkpoint, save_checkpoint
from .metrics import psnr
from .network import AmpNet, ModelConfig, build_model, count_parameters
from .optim import Adam
from .sensing import SensingSystem, make_gaussian_phi, measure, partition_blocks, reassemble
from .tensor import Param, Tape, Tensor
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Adam", "AmpNet", "Checkpoint", "ModelConfig", "Param", "SensingSystem", "Tape", "Tensor",
    "TrainConfig", "TransformD", "amp_reconstruct", "build_model", "count_parameters",
    "load_checkpoint", "make_gaussian_phi", "measure", "model_from_checkpoint", "partition_blocks",
    "pinv_apply", "psnr", "reassemble", "save_checkpoint", "soft_threshold", "train",
]
