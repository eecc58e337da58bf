"""Audio I/O, feature archives and the acoustic front end.

The front end produces 40 log-mel filterbank energies plus a 3-column
autocorrelation pitch contour on 25 ms windows with a 10 ms hop.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_RATE = 16000
WIN_SECONDS = 0.025
HOP_SECONDS = 0.010
N_FFT = 512
N_MELS = 40
LOG_FLOOR = 1e-10

PITCH_FMIN_HZ = 60.0
PITCH_FMAX_HZ = 400.0
UNVOICED_F0_HZ = 100.0

FEAT_MAGIC = b"MBFEAT1\n"
_FEAT_HEADER = struct.Struct("<IIdd")


class AudioFormatError(ValueError):
    """Malformed or truncated audio / feature container."""


class UnsupportedFormatError(AudioFormatError):
    """Container is valid but uses an encoding we refuse to convert."""


def round_half_away(x):
    """Round half away from zero (``np.round`` rounds half to even)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def seconds_to_samples(t: float, rate: int) -> int:
    return int(round_half_away(t * rate))


@dataclass
class Waveform:
    samples: np.ndarray
    rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if int(self.rate) != self.rate or self.rate <= 0:
            raise ValueError(f"sample rate must be a positive integer, got {self.rate}")
        self.rate = int(self.rate)
        if self.samples.size and (np.max(np.abs(self.samples)) > 1.0 or not np.all(np.isfinite(self.samples))):
            raise ValueError("waveform samples must be finite and lie in [-1, 1]")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.rate


@dataclass
class FeatureMatrix:
    frames: np.ndarray
    frame_shift: float = HOP_SECONDS
    frame_length: float = WIN_SECONDS
    dim_labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise ValueError(f"feature frames must be a T x D matrix, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("feature matrix contains non-finite values")
        self.frames = frames
        if not self.dim_labels:
            self.dim_labels = tuple(f"d{i}" for i in range(frames.shape[1]))
        self.dim_labels = tuple(self.dim_labels)
        if len(self.dim_labels) != frames.shape[1]:
            raise ValueError("dim_labels must name every column")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def hstack(self, other: "FeatureMatrix") -> "FeatureMatrix":
        if other.n_frames != self.n_frames:
            raise ValueError("cannot stack feature matrices with different frame counts")
        return FeatureMatrix(
            np.hstack([self.frames, other.frames]),
            self.frame_shift,
            self.frame_length,
            self.dim_labels + other.dim_labels,
        )


# ---------------------------------------------------------------------------
# WAV
# ---------------------------------------------------------------------------

def read_wav(path) -> Waveform:
    """Read a PCM16 mono RIFF/WAVE file; samples are scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n = wf.getnframes()
            raw = wf.readframes(n)
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedFormatError(f"{path}: only PCM16 is supported ({msg})") from exc
        raise AudioFormatError(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise AudioFormatError(f"{path}: truncated RIFF header") from exc
    if n_channels != 1:
        raise UnsupportedFormatError(f"{path}: {n_channels} channels, only mono is supported")
    if width != 2:
        raise UnsupportedFormatError(f"{path}: {8 * width}-bit samples, only 16-bit PCM is supported")
    if len(raw) != 2 * n:
        raise AudioFormatError(f"{path}: data chunk shorter than header claims")
    ints = np.frombuffer(raw, dtype="<i2")
    return Waveform(ints.astype(np.float64) / 32768.0, rate)


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    q = round_half_away(np.asarray(samples, dtype=np.float64) * 32768.0)
    return np.clip(q, -32768, 32767).astype("<i2")


def write_wav(w: Waveform, path) -> None:
    """Write ``w`` as PCM16 mono, quantizing with the same 1/32768 step ``read_wav`` uses."""
    data = quantize_pcm16(w.samples).tobytes()
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.rate)
        wf.writeframes(data)


# ---------------------------------------------------------------------------
# Framing and features
# ---------------------------------------------------------------------------

def frame_count(n_samples: int, rate: int = DEFAULT_RATE, win: float = WIN_SECONDS,
                hop: float = HOP_SECONDS) -> int:
    win_len = seconds_to_samples(win, rate)
    hop_len = seconds_to_samples(hop, rate)
    if n_samples < win_len:
        return 0
    return (n_samples - win_len) // hop_len + 1


def frame_signal(x: np.ndarray, rate: int, win: float = WIN_SECONDS, hop: float = HOP_SECONDS) -> np.ndarray:
    """Slice ``x`` into a (T, win_len) matrix of DC-removed frames."""
    win_len = seconds_to_samples(win, rate)
    hop_len = seconds_to_samples(hop, rate)
    n = frame_count(len(x), rate, win, hop)
    if n == 0:
        return np.zeros((0, win_len))
    idx = np.arange(win_len)[None, :] + hop_len * np.arange(n)[:, None]
    frames = np.asarray(x, dtype=np.float64)[idx]
    return frames - frames.mean(axis=1, keepdims=True)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, rate: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters, shape (n_mels, n_fft // 2 + 1), peak weight 1."""
    fmax = rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_hz = np.arange(n_fft // 2 + 1) * rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz[None, :] - lo) / (mid - lo)
    falling = (hi - bin_hz[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_center_frequencies(n_mels: int, rate: int, fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    fmax = rate / 2.0 if fmax is None else fmax
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))[1:-1]


def logmel_features(w: Waveform, n_mels: int = N_MELS, n_fft: int = N_FFT,
                    pre_emphasis: float = 0.0) -> FeatureMatrix:
    x = w.samples
    if pre_emphasis and x.size:
        x = np.append(x[0], x[1:] - pre_emphasis * x[:-1])
    frames = frame_signal(x, w.rate)
    win_len = frames.shape[1]
    if n_fft < win_len:
        raise ValueError(f"n_fft={n_fft} shorter than the {win_len}-sample window")
    labels = tuple(f"mel{i}" for i in range(n_mels))
    if frames.shape[0] == 0:
        return FeatureMatrix(np.zeros((0, n_mels)), HOP_SECONDS, WIN_SECONDS, labels)
    spec = np.fft.rfft(frames * np.hanning(win_len), n=n_fft, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    energies = power @ mel_filterbank(n_mels, n_fft, w.rate).T
    return FeatureMatrix(np.log(np.maximum(energies, LOG_FLOOR)), HOP_SECONDS, WIN_SECONDS, labels)


def pitch_features(w: Waveform, fmin: float = PITCH_FMIN_HZ, fmax: float = PITCH_FMAX_HZ) -> FeatureMatrix:
    """Per-frame (voicing, log F0, delta log F0) from the normalized autocorrelation.

    Column 1 is the largest normalized cross-correlation over lags whose
    frequency lies in [fmin, fmax], clipped to [0, 1]. Frames with no
    positive peak get F0 = 100 Hz.
    """
    labels = ("pitch_voicing", "pitch_logf0", "pitch_dlogf0")
    frames = frame_signal(w.samples, w.rate)
    n, win_len = frames.shape
    if n == 0:
        return FeatureMatrix(np.zeros((0, 3)), HOP_SECONDS, WIN_SECONDS, labels)
    lag_lo = max(1, int(np.floor(w.rate / fmax)))
    lag_hi = min(win_len - 2, int(np.ceil(w.rate / fmin)))
    n_fft = 1 << int(np.ceil(np.log2(2 * win_len)))
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    acf = np.fft.irfft(spec.real ** 2 + spec.imag ** 2, n=n_fft, axis=1)[:, :win_len]
    sq = frames ** 2
    csum = np.concatenate([np.zeros((n, 1)), np.cumsum(sq, axis=1)], axis=1)
    lags = np.arange(lag_lo - 1, lag_hi + 2)
    head = csum[:, win_len - lags]                  # energy of x[0 : N - lag]
    tail = csum[:, -1:] - csum[:, lags]             # energy of x[lag : N]
    denom = np.sqrt(head * tail)
    with np.errstate(invalid="ignore", divide="ignore"):
        nccf = np.where(denom > 1e-12, acf[:, lags] / np.where(denom > 0, denom, 1.0), 0.0)
    band = nccf[:, 1:-1]
    best = np.argmax(band, axis=1)
    peak = band[np.arange(n), best]
    # prefer the shortest lag whose local peak is close to the global one (octave errors)
    for t in range(n):
        if peak[t] <= 0:
            continue
        row = band[t]
        for k in range(best[t]):
            left = nccf[t, k]
            right = nccf[t, k + 2]
            if row[k] >= 0.95 * peak[t] and row[k] >= left and row[k] >= right:
                best[t] = k
                break
    peak = band[np.arange(n), best]
    # parabolic refinement of the chosen lag
    y0 = nccf[np.arange(n), best]
    y1 = nccf[np.arange(n), best + 1]
    y2 = nccf[np.arange(n), best + 2]
    curv = y0 - 2 * y1 + y2
    with np.errstate(invalid="ignore", divide="ignore"):
        offset = np.where(curv < 0, 0.5 * (y0 - y2) / curv, 0.0)
    offset = np.clip(offset, -0.5, 0.5)
    lag = lags[best + 1] + offset
    voiced = peak > 0
    f0 = np.where(voiced, w.rate / lag, UNVOICED_F0_HZ)
    logf0 = np.log(f0)
    delta = np.concatenate([[0.0], np.diff(logf0)])
    out = np.column_stack([np.clip(peak, 0.0, 1.0), logf0, delta])
    return FeatureMatrix(out, HOP_SECONDS, WIN_SECONDS, labels)


def extract_features(w: Waveform, n_mels: int = N_MELS, pitch: bool = True) -> FeatureMatrix:
    fm = logmel_features(w, n_mels)
    return fm.hstack(pitch_features(w)) if pitch else fm


# ---------------------------------------------------------------------------
# Feature archive
# ---------------------------------------------------------------------------

def write_features(fm: FeatureMatrix, path) -> None:
    """Write ``fm`` as ``MBFEAT1``: header then row-major little-endian f32."""
    t, d = fm.frames.shape
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC)
        fh.write(_FEAT_HEADER.pack(t, d, float(fm.frame_shift), float(fm.frame_length)))
        fh.write(np.ascontiguousarray(fm.frames, dtype="<f4").tobytes())


def read_features(path, dim_labels: Sequence[str] = ()) -> FeatureMatrix:
    blob = Path(path).read_bytes()
    if not blob.startswith(FEAT_MAGIC):
        raise AudioFormatError(f"{path}: bad magic, not an MBFEAT1 archive")
    off = len(FEAT_MAGIC)
    if len(blob) < off + _FEAT_HEADER.size:
        raise AudioFormatError(f"{path}: truncated header")
    t, d, shift, length = _FEAT_HEADER.unpack_from(blob, off)
    off += _FEAT_HEADER.size
    expected = 4 * t * d
    if len(blob) - off != expected:
        raise AudioFormatError(
            f"{path}: header declares {t}x{d} values ({expected} bytes) but payload has {len(blob) - off}"
        )
    frames = np.frombuffer(blob, dtype="<f4", offset=off, count=t * d).reshape(t, d)
    return FeatureMatrix(frames.astype(np.float64), shift, length, tuple(dim_labels))
