"""qsmnet_trainer: toy-scale 3D U-net dipole-deconvolution trainer."""

__version__ = "0.1.0"

from .data import QPatchDataset
from .infer import infer_file, infer_volume
from .losses import LossWeights, load_kernel, loss_gradient, loss_l1, loss_model, total_loss
from .net import NetConfig, UNet3D, build_network
from .train import TrainConfig, learning_rate, load_checkpoint, train, train_from_files
