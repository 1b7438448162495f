"""Quantized self-repairing neural networks on simulated PCM crossbars."""

from .datasets import Dataset, load_idx, synthetic_digits
from .device import Calibration, DeviceConfig, PcmPair
from .network import ConstrainedNetClassifier, Network, TrainConfig, build_network, evaluate, train
from .quantize import (AnnealConfig, BinSet, DecomposedLayer, DualBinQuantizer,
                       QuantizationScheme, anneal, decompose, reconstruct)
from .repair import RepairConfig, RepairEvent, TimelineLog, TimelineVariant, run_timeline

__all__ = [
    "AnnealConfig", "BinSet", "Calibration", "ConstrainedNetClassifier", "Dataset",
    "DecomposedLayer", "DeviceConfig", "DualBinQuantizer", "Network", "PcmPair",
    "QuantizationScheme", "RepairConfig", "RepairEvent", "TimelineLog",
    "TimelineVariant", "TrainConfig", "anneal", "build_network", "decompose",
    "evaluate", "load_idx", "reconstruct", "run_timeline", "synthetic_digits", "train",
]

__version__ = "0.1.0"
