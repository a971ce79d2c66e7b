"""Audio ingestion and the MFCC + delta + acceleration front-end."""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct, rfft

from ._io import atomic_write_bytes

LVF_MAGIC = b"LVF1"
LOG_FLOOR = np.log(1e-10)


class AudioFormatError(ValueError):
    """Raised for WAV files this front-end does not accept."""


@dataclass(frozen=True)
class AudioSignal:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("audio must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FeatureMatrix:
    """D x T matrix, one column per frame."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] == 0:
            raise ValueError(f"feature matrix must be non-empty D x T, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature matrix contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def by_frame(self) -> np.ndarray:
        """T x D view, the layout the density kernels consume."""
        return np.ascontiguousarray(self.data.T)

    @classmethod
    def from_frames(cls, frames: np.ndarray) -> "FeatureMatrix":
        return cls(np.asarray(frames, dtype=np.float64).T)


@dataclass(frozen=True)
class MfccConfig:
    frame_len: float = 0.020
    frame_shift: float = 0.010
    n_mel_filters: int = 26
    n_cepstra: int = 13
    preemphasis: float = 0.97
    fft_size: int = 512
    delta_window: int = 2
    drop_static_c0: bool = True

    def __post_init__(self):
        if not 0 < self.frame_shift <= self.frame_len:
            raise ValueError("need 0 < frame_shift <= frame_len")
        if not 1 <= self.n_cepstra <= self.n_mel_filters:
            raise ValueError("need 1 <= n_cepstra <= n_mel_filters")
        if self.delta_window < 1:
            raise ValueError("delta_window must be >= 1")

    @property
    def output_dim(self) -> int:
        if self.drop_static_c0:
            return (self.n_cepstra - 1) + 2 * self.n_cepstra
        return 3 * self.n_cepstra

    def window_samples(self, rate: int) -> tuple[int, int]:
        return int(round(self.frame_len * rate)), int(round(self.frame_shift * rate))


def load_wav(path) -> AudioSignal:
    """Read a mono 16-bit PCM WAV file, scaled to [-1, 1)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError, struct.error) as exc:
        raise AudioFormatError(f"{path}: not a PCM RIFF/WAVE file ({exc})") from exc
    if channels != 1:
        raise AudioFormatError(f"channel count {channels} unsupported")
    if width != 2:
        raise AudioFormatError(f"sample width {8 * width} bits unsupported, need 16-bit PCM")
    pcm = np.frombuffer(raw, dtype="<i2")
    if pcm.size == 0:
        raise AudioFormatError(f"{path}: no audio samples")
    return AudioSignal(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(path, audio: AudioSignal) -> None:
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with wave.open(str(tmp), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(audio.sample_rate)
        wf.writeframes(pcm.tobytes())
    tmp.replace(path)


def frame_count(n_samples: int, cfg: MfccConfig, rate: int) -> int:
    win, hop = cfg.window_samples(rate)
    if n_samples < win:
        raise ValueError(f"signal of {n_samples} samples is shorter than one {win}-sample frame")
    return 1 + (n_samples - win) // hop


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MfccConfig, rate: int) -> tuple[np.ndarray, np.ndarray]:
    """Triangular filters on the HTK mel scale spanning 0 Hz to rate/2.

    Returns the (n_filters, fft_size//2 + 1) weight matrix and the filter
    centre frequencies in Hz.
    """
    n_bins = cfg.fft_size // 2 + 1
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(rate / 2.0), cfg.n_mel_filters + 2))
    freqs = np.arange(n_bins) * rate / cfg.fft_size
    weights = np.zeros((cfg.n_mel_filters, n_bins))
    for i in range(cfg.n_mel_filters):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        weights[i] = np.maximum(0.0, np.minimum(rising, falling))
    return weights, edges[1:-1]


def frame_signal(samples: np.ndarray, cfg: MfccConfig, rate: int) -> np.ndarray:
    win, hop = cfg.window_samples(rate)
    n = frame_count(samples.size, cfg, rate)
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    return samples[idx]


def filterbank_energies(audio: AudioSignal, cfg: MfccConfig = MfccConfig()) -> np.ndarray:
    """Mel filterbank outputs per frame, shape (T, n_filters), before the log."""
    rate = audio.sample_rate
    win, _ = cfg.window_samples(rate)
    if cfg.fft_size < win:
        raise ValueError(f"fft_size {cfg.fft_size} shorter than the {win}-sample frame")
    frames = frame_signal(audio.samples, cfg, rate)
    emph = np.empty_like(frames)
    emph[:, 1:] = frames[:, 1:] - cfg.preemphasis * frames[:, :-1]
    emph[:, 0] = frames[:, 0] * (1.0 - cfg.preemphasis)
    spectrum = np.abs(rfft(emph * np.hamming(win), n=cfg.fft_size, axis=1))
    weights, _ = mel_filterbank(cfg, rate)
    return spectrum @ weights.T


def deltas(feats: np.ndarray, window: int) -> np.ndarray:
    """Regression deltas along axis 0 (time) with edge-frame replication."""
    T = feats.shape[0]
    padded = np.concatenate([np.repeat(feats[:1], window, 0), feats, np.repeat(feats[-1:], window, 0)])
    num = np.zeros_like(feats)
    for n in range(1, window + 1):
        num += n * (padded[window + n : window + n + T] - padded[window - n : window - n + T])
    return num / (2.0 * sum(n * n for n in range(1, window + 1)))


def compute_features(audio: AudioSignal, cfg: MfccConfig = MfccConfig()) -> FeatureMatrix:
    """MFCC with delta and acceleration coefficients.

    With the default configuration the rows are ``[c1..c12, d0..d12, a0..a12]``
    (static c0 dropped), 38 in total.
    """
    energies = filterbank_energies(audio, cfg)
    with np.errstate(divide="ignore"):
        log_e = np.maximum(np.log(energies), LOG_FLOOR)
    ceps = dct(log_e, type=2, norm="ortho", axis=1)[:, : cfg.n_cepstra]
    d1 = deltas(ceps, cfg.delta_window)
    d2 = deltas(d1, cfg.delta_window)
    static = ceps[:, 1:] if cfg.drop_static_c0 else ceps
    return FeatureMatrix.from_frames(np.hstack([static, d1, d2]))


def write_features(path, feats: FeatureMatrix) -> None:
    """Write the LVF1 binary format: magic, D and T as u32, then frames of float64."""
    header = LVF_MAGIC + struct.pack("<II", feats.dim, feats.frames)
    payload = np.ascontiguousarray(feats.data.T, dtype="<f8").tobytes()
    atomic_write_bytes(path, header + payload)


def read_features(path) -> FeatureMatrix:
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != LVF_MAGIC:
        raise ValueError(f"{path}: not an LVF1 feature file")
    D, T = struct.unpack("<II", blob[4:12])
    body = blob[12:]
    if len(body) != 8 * D * T:
        raise ValueError(f"{path}: expected {D}x{T} values, file holds {len(body) // 8}")
    frames = np.frombuffer(body, dtype="<f8").reshape(T, D)
    return FeatureMatrix.from_frames(frames)
