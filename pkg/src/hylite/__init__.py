"""Locality-aware hyperspectral image transformer on a small numpy autodiff engine."""
from .data import HsiCube, PatchBatch, SplitList, load_cube, patchify, synth_generate
from .losses import cross_entropy, objective, reg_loss
from .metrics import EvalReport, evaluate
from .model import ModelConfig, ModelParams, forward, init_params
from .tensor import Tensor, backward, grad_check
from .trainer import Dataset, TrainConfig, evaluate_model, train

__version__ = "0.1.0"
