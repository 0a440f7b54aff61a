"""End-to-end trainable LPC vocoder with a differentiable reflection-coefficient front end."""

from .estimator import BandCepstrum, EndToEndLPCNet
from .features import AnalysisConfig, analyze, ground_truth_lpc
from .losses import LossConfig
from .model import ModelConfig, load_checkpoint, save_checkpoint, synthesize
from .signal_ops import Signal
from .training import TrainConfig, fit

__version__ = "0.1.0"

__all__ = [
    "AnalysisConfig", "BandCepstrum", "EndToEndLPCNet", "LossConfig", "ModelConfig", "Signal",
    "TrainConfig", "analyze", "fit", "ground_truth_lpc", "load_checkpoint", "save_checkpoint", "synthesize",
]
