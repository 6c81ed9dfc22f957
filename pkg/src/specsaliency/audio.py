"""WAV reading and log-mel spectrogram extraction.

The featurization is fixed and bit-stable so that downstream components can
reproduce it exactly: 25 ms Hann window (symmetric), 10 ms stride, 512-point
rFFT, 80 triangular mel filters (HTK scale, 0-8000 Hz, peak height 1),
natural log with a 1e-10 energy floor, no pre-emphasis and no dithering.
"""

import wave
from dataclasses import dataclass

import numpy as np

from . import binio
from .errors import DomainError, FormatError, TooShortError, UnsupportedFormatError

SAMPLE_RATE = 16000
WINDOW_S = 0.025
STRIDE_S = 0.010
N_MELS = 80
N_FFT = 512
FMIN_HZ = 0.0
FMAX_HZ = 8000.0
LOG_FLOOR = 1e-10


@dataclass
class Waveform:
    """Mono PCM audio scaled to [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate


@dataclass
class Spectrogram:
    """T x C grid of log-mel energies at a fixed frame stride."""

    frames: np.ndarray
    frame_stride_s: float = STRIDE_S
    window_s: float = WINDOW_S
    cmvn_applied: bool = False

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def n_mels(self):
        return self.frames.shape[1]

    @property
    def duration_s(self):
        return self.n_frames * self.frame_stride_s


def read_wav(path):
    """Read a 16-bit mono PCM WAV file into a [-1, 1] float Waveform."""
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            sample_rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: not a valid WAV file: {exc}") from exc
    if n_channels != 1:
        raise UnsupportedFormatError(
            f"{path}: expected mono audio, got {n_channels} channels"
        )
    if sampwidth != 2:
        raise UnsupportedFormatError(
            f"{path}: expected 16-bit PCM, got {8 * sampwidth}-bit"
        )
    if sample_rate <= 0:
        raise FormatError(f"{path}: invalid sample rate {sample_rate}")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if samples.size == 0:
        raise FormatError(f"{path}: no audio samples")
    return Waveform(samples=samples, sample_rate=sample_rate)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(n_mels=N_MELS, n_fft=N_FFT, sample_rate=SAMPLE_RATE,
                   fmin=FMIN_HZ, fmax=FMAX_HZ):
    """Triangular mel filters (HTK scale), shape (n_mels, n_fft // 2 + 1)."""
    n_bins = n_fft // 2 + 1
    fft_freqs = np.linspace(0.0, sample_rate / 2.0, n_bins)
    mel_pts = np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        left, center, right = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (fft_freqs - left) / (center - left)
        down = (right - fft_freqs) / (right - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mel_center_frequencies(n_mels=N_MELS, fmin=FMIN_HZ, fmax=FMAX_HZ):
    """Center frequency in Hz of each mel filter."""
    mel_pts = np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2)
    return _mel_to_hz(mel_pts[1:-1])


def log_mel(w):
    """Compute the log-mel spectrogram of a 16 kHz waveform."""
    if w.sample_rate != SAMPLE_RATE:
        raise DomainError(
            f"expected {SAMPLE_RATE} Hz audio, got {w.sample_rate} Hz"
        )
    win_len = int(round(WINDOW_S * w.sample_rate))
    hop = int(round(STRIDE_S * w.sample_rate))
    samples = np.asarray(w.samples, dtype=np.float64)
    if len(samples) < win_len:
        raise TooShortError(
            f"audio of {len(samples)} samples is shorter than one "
            f"{win_len}-sample window"
        )
    n_frames = (len(samples) - win_len) // hop + 1
    window = np.hanning(win_len)
    idx = np.arange(win_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = samples[idx] * window
    spectrum = np.fft.rfft(frames, n=N_FFT, axis=1)
    power = np.abs(spectrum) ** 2
    fb = mel_filterbank()
    energies = power @ fb.T
    return Spectrogram(frames=np.log(energies + LOG_FLOOR))


def cmvn(s):
    """Per-channel mean-variance normalization over time.

    Uses the population (1/N) standard deviation; channels with zero variance
    map to all-zeros so silent channels cannot produce NaNs. After this step
    the value 0 is exactly the per-channel mean energy, which is what the
    perturbation fill value relies on.
    """
    if s.n_frames < 2:
        raise TooShortError(
            f"cmvn needs at least 2 frames, got {s.n_frames}"
        )
    frames = np.asarray(s.frames, dtype=np.float64)
    mean = frames.mean(axis=0)
    std = frames.std(axis=0)
    out = np.zeros_like(frames)
    live = std > 0.0
    out[:, live] = (frames[:, live] - mean[live]) / std[live]
    return Spectrogram(
        frames=out,
        frame_stride_s=s.frame_stride_s,
        window_s=s.window_s,
        cmvn_applied=True,
    )


def write_spectrogram(path, s):
    """Write a spectrogram as a JSON header line plus T*C little-endian f32."""
    header = {
        "T": int(s.n_frames),
        "C": int(s.n_mels),
        "stride_s": float(s.frame_stride_s),
        "cmvn": bool(s.cmvn_applied),
    }
    binio.write_record(path, header, [(s.frames, "<f4")])


def read_spectrogram(path):
    header, payload = binio.read_record(path)
    for key in ("T", "C", "stride_s", "cmvn"):
        if key not in header:
            raise FormatError(f"{path}: spectrogram header missing '{key}'")
    t, c = int(header["T"]), int(header["C"])
    (frames,) = binio.split_payload(payload, [((t, c), "<f4")])
    return Spectrogram(
        frames=frames.astype(np.float64),
        frame_stride_s=float(header["stride_s"]),
        cmvn_applied=bool(header["cmvn"]),
    )
