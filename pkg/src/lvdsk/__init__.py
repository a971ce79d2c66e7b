"""Detect which known speakers said which known keywords in a mixture signal."""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .features import (AudioSignal, FeatureMatrix, MfccConfig, compute_features, frame_count,
                       load_wav, read_features, write_features)
from .lvem import (DecodePolicy, DetectionResult, EmConfig, LVState, Posteriors, compute_jpm,
                   decode, e_step, frame_loglik_table, init_flat, init_oracle_keywords,
                   init_oracle_speakers, log_likelihood, m_step, q_value, run_em)
from .models import MixtureModel, ModelBank, TrainConfig, log_pdf, train_bank, train_mixture

__all__ = [
    "BACKEND", "AudioSignal", "FeatureMatrix", "MfccConfig", "compute_features", "frame_count",
    "load_wav", "read_features", "write_features", "DecodePolicy", "DetectionResult", "EmConfig",
    "LVState", "Posteriors", "compute_jpm", "decode", "e_step", "frame_loglik_table", "init_flat",
    "init_oracle_keywords", "init_oracle_speakers", "log_likelihood", "m_step", "q_value", "run_em",
    "MixtureModel", "ModelBank", "TrainConfig", "log_pdf", "train_bank", "train_mixture",
]
