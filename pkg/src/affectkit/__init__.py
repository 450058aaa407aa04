"""affectkit: desk-scale CNN-RNN models for valence/arousal estimation.

From-scratch autodiff tensor engine, the full architecture family (VGG-style
CNN, 1/2/3-RNN extensions, ResNet-bottleneck RNNs, fusion networks), CCC
training objective with per-sequence aggregation, utterance-level data
pipeline, median-filter post-processing and a CLI tying it together.
"""

from .models import ArchitectureSpec, Network, build, build_fusion, forward_sequence
from .objective import Aggregator, aggregate, ccc, ccc_loss, ccc_loss_joint
from .tensor import Tensor, gradients_of
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec", "Network", "build", "build_fusion", "forward_sequence",
    "Aggregator", "aggregate", "ccc", "ccc_loss", "ccc_loss_joint",
    "Tensor", "gradients_of", "TrainConfig", "train", "__version__",
]
