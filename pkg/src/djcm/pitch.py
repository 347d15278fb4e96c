"""Pitch codec: frequencies <-> cents <-> 360-bin activations <-> pitch tracks.

Bins follow the CREPE convention: 360 bins of 20 cents, measured relative to
10 Hz, with bin 0 centered at 1997.3794084376191 cents; bin centers span
~31.7 Hz to ~2006 Hz.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

N_BINS = 360
CENTS_PER_BIN = 20.0
REFERENCE_HZ = 10.0
BIN0_CENTS = 1997.3794084376191
DECODE_HALF_WINDOW = 4  # bins averaged on each side of the activation peak
FRAME_SECONDS = 0.02


def bin_center_cents() -> np.ndarray:
    """Centers of the 360 pitch bins, in cents relative to 10 Hz."""
    return BIN0_CENTS + CENTS_PER_BIN * np.arange(N_BINS)


def hz_to_cents(frequency):
    """Convert Hz (scalar or array, all > 0) to cents relative to 10 Hz."""
    f = np.asarray(frequency, dtype=float)
    if np.any(f <= 0):
        raise InvalidInputError("hz_to_cents requires strictly positive frequencies")
    return 1200.0 * np.log2(f / REFERENCE_HZ) if f.ndim else float(1200.0 * np.log2(f / REFERENCE_HZ))


def cents_to_hz(cents):
    """Inverse of :func:`hz_to_cents`."""
    c = np.asarray(cents, dtype=float)
    out = REFERENCE_HZ * np.exp2(c / 1200.0)
    return out if c.ndim else float(out)


def semitone_to_hz(semitone):
    """MIDI semitone number(s) to Hz, A4 = 69 = 440 Hz.

    Values <= 0 encode unvoiced frames in the label format and map to 0 Hz
    rather than raising; callers branch on the voiced flag.
    """
    m = np.asarray(semitone, dtype=float)
    out = np.where(m > 0, 440.0 * np.exp2((m - 69.0) / 12.0), 0.0)
    return out if m.ndim else float(out)


@dataclass
class PitchTrack:
    """Per-frame pitch on a 20 ms grid; frequency 0 encodes unvoiced."""

    frequencies: np.ndarray
    hop_seconds: float = FRAME_SECONDS

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        if self.frequencies.ndim != 1:
            raise InvalidInputError("pitch track frequencies must be 1-D")
        if np.any(self.frequencies < 0):
            raise InvalidInputError("negative frequency in pitch track")

    def __len__(self) -> int:
        return len(self.frequencies)

    @property
    def voiced(self) -> np.ndarray:
        return self.frequencies > 0

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.frequencies)) * self.hop_seconds


def validate_activation(act: np.ndarray) -> np.ndarray:
    act = np.asarray(act, dtype=float)
    if act.ndim != 2 or act.shape[1] != N_BINS:
        raise InvalidInputError(f"activation must be (T, {N_BINS}), got {act.shape}")
    if act.min() < 0 or act.max() > 1:
        raise InvalidInputError("activation entries must lie in [0, 1]")
    return act


def encode_pitch(track: PitchTrack) -> np.ndarray:
    """Pitch track -> (T, 360) one-hot target matrix.

    Voiced frames set a single 1 at the bin whose center is nearest in cents;
    unvoiced frames are all-zero rows. Out-of-range voiced frequencies are
    clamped to the edge bin (counted and warned once).
    """
    target = np.zeros((len(track), N_BINS), dtype=np.float32)
    voiced = track.voiced
    if not voiced.any():
        return target
    cents = 1200.0 * np.log2(track.frequencies[voiced] / REFERENCE_HZ)
    raw_bins = np.round((cents - BIN0_CENTS) / CENTS_PER_BIN).astype(int)
    clamped = np.clip(raw_bins, 0, N_BINS - 1)
    n_out = int(np.sum(raw_bins != clamped))
    if n_out:
        warnings.warn(f"{n_out} voiced frame(s) outside the pitch bin range were clamped")
    target[np.flatnonzero(voiced), clamped] = 1.0
    return target


def decode_activation(act: np.ndarray, voicing_threshold: float = 0.5) -> PitchTrack:
    """Activation matrix -> pitch track.

    Per frame: the peak bin decides voicing (peak >= threshold); the frequency
    is the activation-weighted mean of bin-center cents over the peak +/- 4
    bins (clipped at the edges), converted back to Hz.
    """
    act = validate_activation(act)
    n_frames = act.shape[0]
    centers = bin_center_cents()
    peak = act.argmax(axis=1)
    voiced = act[np.arange(n_frames), peak] >= voicing_threshold

    freqs = np.zeros(n_frames)
    for t in np.flatnonzero(voiced):
        lo = max(0, peak[t] - DECODE_HALF_WINDOW)
        hi = min(N_BINS, peak[t] + DECODE_HALF_WINDOW + 1)
        w = act[t, lo:hi]
        cents = float(np.dot(w, centers[lo:hi]) / w.sum())
        freqs[t] = cents_to_hz(cents)
    return PitchTrack(freqs)


def semitones_to_track(semitones: np.ndarray) -> PitchTrack:
    """Label values (semitone per 20 ms frame, 0 = unvoiced) -> pitch track."""
    return PitchTrack(semitone_to_hz(np.asarray(semitones, dtype=float)))


def hz_to_semitone(frequency):
    """Hz to MIDI semitone number; 0 Hz maps to 0 (unvoiced label)."""
    f = np.asarray(frequency, dtype=float)
    out = np.where(f > 0, 69.0 + 12.0 * np.log2(np.maximum(f, 1e-12) / 440.0), 0.0)
    return out if f.ndim else float(out)
