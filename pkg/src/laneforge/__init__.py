"""Lane detection from image sequences: masked-autoencoder pretraining, PolyLoss fine-tuning.

Built on a small numpy reverse-mode autodiff core (:mod:`laneforge.tensor`).
"""

from .tensor import DomainError, GraphError, NonFiniteError, ShapeError, Tensor, precision
from .model import Checkpoint, ModelSpec, desk_spec, full_spec, forward, load_checkpoint, save_checkpoint, transfer_weights
from .losses import LossConfig, poly_loss, weighted_ce, focal_loss
from .evaluation import confusion, metrics, count_params_macs, dbscan, fit_curve, render_overlay

__version__ = "0.1.0"
