from . import ops
from .layers import Conv2d, MaxPool2x2, ReLU, UpsampleBilinear2x
from .tensor import Tensor
from .weights import WeightFormatError, load_weights, save_weights

__all__ = [
    "ops",
    "Conv2d",
    "ReLU",
    "MaxPool2x2",
    "UpsampleBilinear2x",
    "Tensor",
    "save_weights",
    "load_weights",
    "WeightFormatError",
]
