"""Attentive filtering network for audio replay-attack detection."""

from .autograd import Tensor, backward, grad_check
from .features import FeatureMap, Waveform, extract, read_feature, read_wav, write_feature
from .model import (
    AfConfig,
    AfnModel,
    DrnConfig,
    afn_forward,
    build_model,
    heatmap,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .scoring import ScoreSet, apply_fusion, compute_eer, fit_fusion, znorm_apply, znorm_fit
from .trainer import Dataset, TrainConfig, train

__version__ = "0.1.0"
