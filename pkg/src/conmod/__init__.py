"""Frame-wise neural modelling of LFO-driven modulation effects with rate and feedback control."""

from .autodiff import Parameter, Tensor, backward, finite_difference_check, stop_gradient
from .losses import LossWeights, esr, mrsl, total_loss
from .model import Conmod, ConmodConfig, ConditionVector, LfoBank, count_parameters
from .oracles import DatasetManifest, FlangerOracleConfig, PhaserOracleConfig, build_dataset
from .signals import AudioBuffer, generate_chirp_train, generate_test_signal, wav_read, wav_write
from .spectral import ComplexSpectrogram, StftConfig, istft, magnitude_spectrogram, stft
from .trainer import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer", "Checkpoint", "ComplexSpectrogram", "ConditionVector", "Conmod", "ConmodConfig",
    "DatasetManifest", "FlangerOracleConfig", "LfoBank", "LossWeights", "Parameter", "PhaserOracleConfig",
    "StftConfig", "Tensor", "TrainConfig", "backward", "build_dataset", "count_parameters", "esr",
    "finite_difference_check", "generate_chirp_train", "generate_test_signal", "istft", "load_checkpoint",
    "magnitude_spectrogram", "mrsl", "save_checkpoint", "stft", "stop_gradient", "total_loss", "train",
    "wav_read", "wav_write",
]
