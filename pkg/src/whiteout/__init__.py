"""Whiteout: adaptive Gaussian noise injection for neural networks and GLMs."""
from .network import Mlp, forward, forward_noisy, init_weights
from .noise import NONE, NoiseSpec, Variant
from .numerics import RngStream
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = ["Mlp", "NONE", "NoiseSpec", "RngStream", "TrainConfig", "Variant", "forward",
           "forward_noisy", "init_weights", "train"]
