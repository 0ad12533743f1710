"""
Log-power spectrogram features and unified fixed-length time-frequency maps.

The pipeline is ``read_wav -> stft_logspec -> sliding_mean_normalize ->
unify_length``.  Frames are not centred and no voice-activity detection is
applied; every frame of the utterance is kept.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FeatureFormatError

SAMPLE_RATE = 16000
FFT_SIZE = 512
N_BINS = FFT_SIZE // 2 + 1
WIN_MS = 25.0
HOP_MS = 10.0
LOG_FLOOR = 1e-10
MEAN_WINDOW_S = 3.0
TARGET_T = 1091

FEATURE_MAGIC = b"AFNF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DataError("waveform must be a non-empty 1-D signal")


@dataclass
class FeatureMap:
    """An ``F x T`` log-power map for one utterance."""

    utt_id: str
    data: np.ndarray

    @property
    def n_freq(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]


def read_wav(path: str | Path) -> Waveform:
    """Read 16-bit PCM mono WAV, scaled to [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1:
                raise DataError(f"{path}: expected mono audio, got {fh.getnchannels()} channels")
            if fh.getsampwidth() != 2:
                raise DataError(f"{path}: expected 16-bit PCM")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError, struct.error) as exc:
        raise DataError(f"{path}: unreadable WAV ({exc})") from exc
    pcm = np.frombuffer(raw, dtype="<i2")
    if pcm.size == 0:
        raise DataError(f"{path}: no audio samples")
    return Waveform(pcm / 32768.0, rate)


def write_wav(path: str | Path, wave_: Waveform) -> None:
    pcm = np.clip(np.round(wave_.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(wave_.sample_rate)
        fh.writeframes(pcm.tobytes())


def stft_logspec(
    wave_: Waveform,
    fft_size: int = FFT_SIZE,
    win_ms: float = WIN_MS,
    hop_ms: float = HOP_MS,
    utt_id: str = "",
    expected_rate: int = SAMPLE_RATE,
) -> FeatureMap:
    """Framewise ``log(|FFT(hamming * frame)|^2 + 1e-10)``.

    Returns a ``(fft_size // 2 + 1) x T`` map with
    ``T = 1 + (len - win) // hop``.
    """
    if wave_.sample_rate != expected_rate:
        raise DataError(f"sample rate {wave_.sample_rate} Hz, expected {expected_rate} Hz")
    win = int(round(win_ms * wave_.sample_rate / 1000))
    hop = int(round(hop_ms * wave_.sample_rate / 1000))
    if win > fft_size:
        raise ValueError(f"window of {win} samples exceeds FFT size {fft_size}")
    x = wave_.samples
    if x.size < win:
        raise DataError(f"waveform of {x.size} samples is shorter than one {win}-sample frame")
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    spec = np.fft.rfft(frames * np.hamming(win), n=fft_size, axis=1)
    power = spec.real**2 + spec.imag**2
    return FeatureMap(utt_id, np.log(power + LOG_FLOOR).T)


def mean_window_frames(window_s: float = MEAN_WINDOW_S, hop_ms: float = HOP_MS) -> int:
    n = int(round(window_s * 1000 / hop_ms))
    return n + 1 if n % 2 == 0 else n


def sliding_mean_normalize(fmap: FeatureMap, window_s: float = MEAN_WINDOW_S, hop_ms: float = HOP_MS) -> FeatureMap:
    """Subtract from each frame the mean over a centred window of frames.

    The window is truncated at the utterance edges.  If the window is at least
    as long as the utterance, the per-bin utterance mean is used.
    """
    x = fmap.data
    t = x.shape[1]
    win = mean_window_frames(window_s, hop_ms)
    if win >= t:
        return FeatureMap(fmap.utt_id, x - x.mean(axis=1, keepdims=True))
    half = win // 2
    csum = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(x, axis=1)], axis=1)
    idx = np.arange(t)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, t)
    means = (csum[:, hi] - csum[:, lo]) / (hi - lo)
    return FeatureMap(fmap.utt_id, x - means)


def unify_length(fmap: FeatureMap, target_T: int = TARGET_T) -> FeatureMap:
    """Tile (or truncate) the map along time so it has exactly ``target_T`` frames."""
    if target_T < 1:
        raise ValueError("target_T must be positive")
    t = fmap.data.shape[1] if fmap.data.ndim == 2 else 0
    if t == 0:
        raise DataError(f"utterance {fmap.utt_id!r} has an empty feature map")
    cols = np.arange(target_T) % t
    return FeatureMap(fmap.utt_id, fmap.data[:, cols])


def extract(wave_: Waveform, utt_id: str = "", target_T: int = TARGET_T) -> FeatureMap:
    """Full pipeline from waveform to unified map."""
    fmap = stft_logspec(wave_, utt_id=utt_id)
    return unify_length(sliding_mean_normalize(fmap), target_T)


def write_feature(path: str | Path, fmap: FeatureMap) -> None:
    """Write the ``AFNF`` binary format (little-endian, float32 row-major)."""
    data = np.ascontiguousarray(fmap.data, dtype="<f4")
    f, t = data.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, f, t))
        fh.write(data.tobytes())


def read_feature(path: str | Path) -> FeatureMap:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read feature file ({exc})") from exc
    if len(blob) < _HEADER.size:
        raise FeatureFormatError(f"{path}: truncated header")
    magic, version, f, t = _HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise FeatureFormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * f * t
    if len(blob) != expected:
        raise FeatureFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(f, t).astype(np.float32)
    return FeatureMap(path.name.removesuffix(".afnf"), data)
