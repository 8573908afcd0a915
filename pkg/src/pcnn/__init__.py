"""Projection convolutional networks: binary-weight training by projection and bit-packed inference."""

from .bitpack import export_model, import_model, load_checkpoint, memory_report, pack, save_checkpoint, unpack, xnor_conv
from .models import build_model
from .projection import DiscreteSet, project
from .trainer import TrainConfig, Trainer, train

__version__ = "0.1.0"
