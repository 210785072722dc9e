"""Training toolkit producing coder-compatible hierarchical models."""

from .model import ModelConfig, TorchShvc
from .train import ElboParts, TrainConfig, elbo, penalized_loss, train

__all__ = ["ModelConfig", "TorchShvc", "ElboParts", "TrainConfig",
           "elbo", "penalized_loss", "train"]
__version__ = "1.0.0"
