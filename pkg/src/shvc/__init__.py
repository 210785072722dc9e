"""Lossless image compression with hierarchical latent variable models.

Two coding modes share one model family: bits-back coding against an
auxiliary bit source, and a variant that bootstraps its own initial bits
from the latent-free part of each spatial block.
"""

from .model import ModelConfig, ShvcModel, load_weights, save_weights

__all__ = ["ModelConfig", "ShvcModel", "load_weights", "save_weights"]
__version__ = "1.0.0"
