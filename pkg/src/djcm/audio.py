"""Waveform <-> complex spectrogram conversion (STFT/iSTFT) and segmentation.

Framing is centered: frame k is aligned with time k * hop / sample_rate, which
matches the 20 ms grid of the pitch labels, and the frame count obeys
T = floor(len / hop) + 1.
"""

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigurationError, InvalidInputError

SAMPLE_RATE = 16000
HOP = 320
WINDOW_SIZE = 2048
SEGMENT_SAMPLES = 40960  # 2.56 s at 16 kHz


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis parameters. Defaults are the pipeline's fixed values."""

    sample_rate: int = SAMPLE_RATE
    hop: int = HOP
    window_size: int = WINDOW_SIZE
    n_fft: int = WINDOW_SIZE
    center: bool = True

    @property
    def freq_bins(self) -> int:
        return self.n_fft // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        return num_samples // self.hop + 1


@dataclass
class AudioClip:
    """Mono waveform at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise InvalidInputError(f"expected mono 1-D samples, got shape {self.samples.shape}")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def validate(self) -> "AudioClip":
        if len(self.samples) == 0:
            raise InvalidInputError("empty audio clip")
        if not np.isfinite(self.samples).all():
            raise InvalidInputError("audio clip contains NaN or Inf")
        return self


@dataclass
class Spectrogram:
    """Complex time-frequency matrix of shape (T, F) with its analysis config."""

    values: torch.Tensor
    config: StftConfig = field(default_factory=StftConfig)

    @property
    def num_frames(self) -> int:
        return self.values.shape[-2]

    @property
    def num_bins(self) -> int:
        return self.values.shape[-1]

    def magnitude(self) -> torch.Tensor:
        return self.values.abs()


@dataclass
class Segment:
    """A fixed-length slice of a clip; `valid_samples` marks the unpadded prefix."""

    clip: AudioClip
    valid_samples: int
    index: int = 0


def _window(cfg: StftConfig, dtype: torch.dtype, device) -> torch.Tensor:
    return torch.hann_window(cfg.window_size, periodic=True, dtype=dtype, device=device)


def stft_tensor(x: torch.Tensor, cfg: StftConfig = StftConfig()) -> torch.Tensor:
    """STFT of a waveform tensor of shape (..., L); returns complex (..., T, F).

    T = floor(L / hop) + 1 and F = n_fft // 2 + 1. Differentiable.
    """
    if x.shape[-1] < 1:
        raise InvalidInputError("cannot transform an empty waveform")
    # reflect padding needs pad < input length; fall back for very short clips
    pad_mode = "reflect" if x.shape[-1] > cfg.n_fft // 2 else "constant"
    spec = torch.stft(
        x,
        n_fft=cfg.n_fft,
        hop_length=cfg.hop,
        win_length=cfg.window_size,
        window=_window(cfg, x.dtype, x.device),
        center=cfg.center,
        pad_mode=pad_mode,
        normalized=False,
        onesided=True,
        return_complex=True,
    )
    return spec.transpose(-2, -1)


def istft_tensor(spec: torch.Tensor, target_length: int,
                 cfg: StftConfig = StftConfig()) -> torch.Tensor:
    """Inverse STFT of a complex (..., T, F) tensor to (..., target_length).

    Overlap-add with window-square normalization; exact inverse of
    :func:`stft_tensor` up to floating point. Differentiable.
    """
    n_frames, n_bins = spec.shape[-2], spec.shape[-1]
    if n_bins != cfg.freq_bins:
        raise InvalidInputError(f"expected {cfg.freq_bins} frequency bins, got {n_bins}")
    if target_length > cfg.hop * (n_frames - 1) + cfg.window_size:
        raise InvalidInputError(
            f"target_length {target_length} exceeds the span of {n_frames} frames")
    dtype = torch.float64 if spec.dtype == torch.complex128 else torch.float32
    return torch.istft(
        spec.transpose(-2, -1),
        n_fft=cfg.n_fft,
        hop_length=cfg.hop,
        win_length=cfg.window_size,
        window=_window(cfg, dtype, spec.device),
        center=cfg.center,
        length=target_length,
    )


def stft(clip: AudioClip, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """STFT of an audio clip; validates sample rate and finiteness."""
    if clip.sample_rate != cfg.sample_rate:
        raise ConfigurationError(
            f"clip sample rate {clip.sample_rate} != configured {cfg.sample_rate}")
    clip.validate()
    x = torch.from_numpy(np.ascontiguousarray(clip.samples, dtype=np.float64))
    return Spectrogram(stft_tensor(x, cfg), cfg)


def istft(spec: Spectrogram, target_length: int) -> AudioClip:
    """Reconstruct a waveform of exactly `target_length` samples."""
    y = istft_tensor(spec.values, target_length, spec.config)
    return AudioClip(y.numpy(), spec.config.sample_rate)


def segment(clip: AudioClip, seg_samples: int = SEGMENT_SAMPLES) -> list[Segment]:
    """Split into consecutive non-overlapping fixed-length segments.

    The final remainder is zero-padded to `seg_samples`; its true length is
    recorded in `valid_samples` so losses can mask the padding. An empty clip
    yields an empty list.
    """
    if seg_samples <= 0:
        raise InvalidInputError("seg_samples must be positive")
    n = len(clip.samples)
    out = []
    for i, start in enumerate(range(0, n, seg_samples)):
        chunk = clip.samples[start:start + seg_samples]
        valid = len(chunk)
        if valid < seg_samples:
            chunk = np.concatenate([chunk, np.zeros(seg_samples - valid, dtype=clip.samples.dtype)])
        out.append(Segment(AudioClip(chunk, clip.sample_rate), valid, index=i))
    return out


def unsegment(segments: list[Segment]) -> AudioClip:
    """Concatenate segments, truncating each to its valid length."""
    if not segments:
        raise InvalidInputError("no segments to concatenate")
    parts = [s.clip.samples[:s.valid_samples] for s in segments]
    return AudioClip(np.concatenate(parts), segments[0].clip.sample_rate)
