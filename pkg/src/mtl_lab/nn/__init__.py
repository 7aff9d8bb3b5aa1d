from .autograd import Tensor, no_grad
from .modules import Conv2d, GroupNorm, LayerNorm, Linear, Module, ModuleList, Parameter
from .optim import Adam

__all__ = [
    "Tensor",
    "no_grad",
    "Module",
    "ModuleList",
    "Parameter",
    "Linear",
    "Conv2d",
    "GroupNorm",
    "LayerNorm",
    "Adam",
]
