"""Corpus handling: on-disk layout, synthetic song generation, train/test
splitting, and conversion of songs into fixed-length training batches.

A corpus directory holds stereo wav files under ``Wavfile/`` (left channel
accompaniment, right channel vocals) and per-song semitone label files under
``PitchLabel/`` (one value per 20 ms frame, 0 = unvoiced). Loading applies a
half gain to both channels so the mixture never clips; synthetic corpora are
written with the inverse gain, making write -> load a round trip.
"""

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.io import wavfile

from .audio import SAMPLE_RATE, SEGMENT_SAMPLES, AudioClip, StftConfig, segment
from .errors import DataError, InvalidInputError
from .pitch import PitchTrack, encode_pitch, hz_to_semitone, semitone_to_hz

WAV_DIR = "Wavfile"
LABEL_DIR = "PitchLabel"
MIX_TOLERANCE = 1e-6


@dataclass
class SongRecord:
    """One song: mixture stem pair and the per-frame pitch labels."""

    song_id: str
    mixture: AudioClip
    vocals: AudioClip
    accompaniment: AudioClip
    pitch_labels: PitchTrack

    def validate(self):
        self.mixture.validate()
        self.vocals.validate()
        self.accompaniment.validate()
        if not (len(self.mixture.samples) == len(self.vocals.samples)
                == len(self.accompaniment.samples)):
            raise DataError(f"{self.song_id}: stem length mismatch")
        residual = self.mixture.samples - self.vocals.samples - self.accompaniment.samples
        if np.max(np.abs(residual), initial=0.0) >= MIX_TOLERANCE:
            raise DataError(f"{self.song_id}: mixture is not vocals + accompaniment")


@dataclass
class DatasetSplit:
    """Song ids per side of a deterministic split."""

    train: list
    test: list
    seed: int


def _as_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    return data.astype(np.float64)


def _read_pv(path: Path) -> np.ndarray:
    values = []
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise DataError(f"{path.name}:{line_no}: bad label {line!r}") from None
    arr = np.asarray(values, dtype=np.float64)
    if np.any(arr < 0):
        raise DataError(f"{path.name}: negative semitone label")
    return arr


def load_mir1k(root, limit: int | None = None) -> list[SongRecord]:
    """Load a corpus directory into SongRecords, sorted by song id.

    Channels are halved before mixing (mixture = 0.5 left + 0.5 right) so the
    sum cannot clip; separation metrics compare against the equally scaled
    vocals, so scores are unaffected. Songs without a label file are skipped
    with a warning; mono files are rejected.
    """
    root = Path(root)
    wav_dir = root / WAV_DIR
    label_dir = root / LABEL_DIR
    if not wav_dir.is_dir():
        raise DataError(f"missing {wav_dir}")
    records = []
    for wav_path in sorted(wav_dir.glob("*.wav")):
        if limit is not None and len(records) >= limit:
            break
        label_path = label_dir / (wav_path.stem + ".pv")
        if not label_path.is_file():
            warnings.warn(f"{wav_path.name}: no label file {label_path.name}, skipping")
            continue
        sr, data = wavfile.read(wav_path)
        if sr != SAMPLE_RATE:
            raise DataError(f"{wav_path.name}: sample rate {sr}, expected {SAMPLE_RATE}")
        if data.ndim != 2 or data.shape[1] != 2:
            raise DataError(f"{wav_path.name}: expected stereo accompaniment/vocal file")
        data = _as_float(data)
        accompaniment = 0.5 * data[:, 0]
        vocals = 0.5 * data[:, 1]
        semitones = _read_pv(label_path)
        record = SongRecord(
            song_id=wav_path.stem,
            mixture=AudioClip(accompaniment + vocals, sr),
            vocals=AudioClip(vocals, sr),
            accompaniment=AudioClip(accompaniment, sr),
            pitch_labels=PitchTrack(semitone_to_hz(semitones)),
        )
        record.validate()
        _check_label_alignment(record)
        records.append(record)
    if not records:
        raise DataError(f"no usable songs under {wav_dir}")
    return records


def write_corpus(records: list[SongRecord], root):
    """Write records to disk in the corpus layout (float32 stereo wavs).

    Channels carry twice the stored stems, inverting the half gain load_mir1k
    applies, so writing and reloading reproduces the records.
    """
    root = Path(root)
    (root / WAV_DIR).mkdir(parents=True, exist_ok=True)
    (root / LABEL_DIR).mkdir(parents=True, exist_ok=True)
    for rec in records:
        rec.validate()
        stereo = np.stack([2.0 * rec.accompaniment.samples,
                           2.0 * rec.vocals.samples], axis=1).astype(np.float32)
        wavfile.write(root / WAV_DIR / f"{rec.song_id}.wav", rec.mixture.sample_rate, stereo)
        semitones = hz_to_semitone(rec.pitch_labels.frequencies)
        lines = "\n".join(f"{s:.6f}" for s in semitones)
        (root / LABEL_DIR / f"{rec.song_id}.pv").write_text(lines + "\n")


_PARTIAL_AMPS = np.array([1.0, 0.5, 0.33, 0.25, 0.2, 0.16])
_NOTE_FRAMES = 32        # 0.64 s note blocks at 20 ms per label frame
_PALETTE_SIZE = 4        # distinct semitones per song
_NOISE_CUTOFF_HZ = 90.0  # accompaniment noise band, below the lowest f0


def synth_dataset(n_songs: int = 4, seconds: float = 2.56, seed: int = 1234,
                  snr_db: float = 0.0) -> list[SongRecord]:
    """Deterministic synthetic corpus: harmonic note vocals over low tones
    plus band-limited noise, scaled so the vocal/accompaniment energy ratio
    is exactly snr_db.

    Each song draws a small palette of semitones in 196-440 Hz; fundamentals
    are constant within 0.64 s blocks with genuinely unvoiced gaps, so every
    label frame is unambiguous. The accompaniment lives below the vocal
    register, which keeps the separation task solvable by a spectral mask.
    """
    from scipy.signal import butter, sosfiltfilt

    rng = np.random.default_rng(seed)
    n_samples = int(round(seconds * SAMPLE_RATE))
    hop = 320
    n_label_frames = n_samples // hop + 1
    n_blocks = (n_label_frames + _NOTE_FRAMES - 1) // _NOTE_FRAMES
    if n_blocks < 2:
        raise InvalidInputError(
            f"seconds={seconds} gives {n_blocks} note block(s); need at least 2 "
            "so every song has both voiced and unvoiced frames")
    t = np.arange(n_samples) / SAMPLE_RATE
    sos = butter(4, _NOISE_CUTOFF_HZ / (SAMPLE_RATE / 2), output="sos")

    records = []
    for idx in range(n_songs):
        while True:
            voiced = rng.random(n_blocks) < 0.85
            if voiced.any() and (~voiced).any():
                break
        palette = rng.choice(np.arange(55, 70), size=_PALETTE_SIZE, replace=False)
        midi = rng.choice(palette, size=n_blocks)

        block_hz = np.where(voiced, 440.0 * 2.0 ** ((midi - 69) / 12.0), 0.0)
        frame_hz = np.repeat(block_hz, _NOTE_FRAMES)[:n_label_frames]

        vocals = np.zeros(n_samples)
        amp = 0.5 + 0.2 * rng.random()
        block_samples = _NOTE_FRAMES * hop
        for b in range(n_blocks):
            if not voiced[b]:
                continue
            sl = slice(b * block_samples, min((b + 1) * block_samples, n_samples))
            phase = 2.0 * np.pi * block_hz[b] * t[sl]
            tone = sum(a * np.sin((h + 1) * phase + rng.uniform(0, 2 * np.pi))
                       for h, a in enumerate(_PARTIAL_AMPS))
            vocals[sl] = amp * tone

        accompaniment = sum(0.3 * np.sin(2.0 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
                            for f in (55.0, 82.5, 110.0))
        accompaniment = accompaniment + sosfiltfilt(sos, 0.3 * rng.standard_normal(n_samples))
        # scale accompaniment for an exact vocals/accompaniment energy ratio
        accompaniment *= np.linalg.norm(vocals) / (
            np.linalg.norm(accompaniment) * 10.0 ** (snr_db / 20.0))

        records.append(SongRecord(
            song_id=f"synth_{idx:03d}",
            mixture=AudioClip(vocals + accompaniment, SAMPLE_RATE),
            vocals=AudioClip(vocals, SAMPLE_RATE),
            accompaniment=AudioClip(accompaniment, SAMPLE_RATE),
            pitch_labels=PitchTrack(frame_hz),
        ))
    return records


def split(records: list[SongRecord], train_fraction: float = 0.8,
          seed: int = 0) -> DatasetSplit:
    """Deterministic shuffled song-level split into floor(fraction*N) train
    ids and the remaining test ids."""
    if len(records) < 2:
        raise InvalidInputError("need at least 2 records to split")
    if not 0.0 < train_fraction < 1.0:
        raise InvalidInputError(f"train_fraction {train_fraction} outside (0, 1)")
    ids = [rec.song_id for rec in records]
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(len(ids) * train_fraction)
    train = [ids[i] for i in order[:n_train]]
    test = [ids[i] for i in order[n_train:]]
    return DatasetSplit(train=train, test=test, seed=seed)


def records_by_id(records: list[SongRecord], ids) -> list[SongRecord]:
    by_id = {rec.song_id: rec for rec in records}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise DataError(f"unknown song ids: {missing}")
    return [by_id[i] for i in ids]


def _check_label_alignment(record: SongRecord, hop: int = 320):
    expected = len(record.mixture.samples) // hop + 1
    got = len(record.pitch_labels.frequencies)
    if abs(got - expected) > 1:
        raise DataError(
            f"{record.song_id}: {got} label frames but audio implies {expected}")


def segment_record(record: SongRecord, segment_samples: int = SEGMENT_SAMPLES,
                   hop: int = 320) -> list[dict]:
    """Cut one song into aligned training examples.

    Segment k covers samples [k*S, (k+1)*S); its STFT frame t sits at global
    label frame k*(S/hop) + t, so consecutive segments share one boundary
    frame. Labels beyond the recorded ones count as unvoiced, and frames past
    the real audio are masked via valid_frames.
    """
    if segment_samples % hop != 0:
        raise DataError(f"segment_samples {segment_samples} not a multiple of hop {hop}")
    _check_label_alignment(record, hop=hop)
    frames_per_seg = segment_samples // hop + 1
    mix_segs = segment(record.mixture, segment_samples)
    voc_segs = segment(record.vocals, segment_samples)

    n_seg = len(mix_segs)
    needed = (n_seg - 1) * (segment_samples // hop) + frames_per_seg
    labels = np.zeros(needed, dtype=np.float64)
    have = min(len(record.pitch_labels.frequencies), needed)
    labels[:have] = record.pitch_labels.frequencies[:have]

    examples = []
    for k, (mix, voc) in enumerate(zip(mix_segs, voc_segs)):
        start = k * (segment_samples // hop)
        frame_hz = labels[start:start + frames_per_seg]
        target = encode_pitch(PitchTrack(frame_hz))
        valid_frames = min(frames_per_seg, mix.valid_samples // hop + 1)
        examples.append({
            "song_id": record.song_id,
            "segment_index": k,
            "mixture": mix.clip.samples.astype(np.float32),
            "vocals": voc.clip.samples.astype(np.float32),
            "target": target,
            "valid_samples": mix.valid_samples,
            "valid_frames": valid_frames,
        })
    return examples


def make_batches(records: list[SongRecord], batch_size: int = 16,
                 segment_samples: int = SEGMENT_SAMPLES,
                 shuffle: bool = False, seed: int = 0,
                 stft_config: StftConfig | None = None) -> list[dict]:
    """Segment all songs and pack them into batches of torch tensors.

    Each batch maps ``mixture``/``vocals`` to (B, S) float32 waveforms,
    ``target`` to (B, T, n_bins) one-hot activations, ``valid_samples`` and
    ``valid_frames`` to (B,) int64 masks, plus song/segment bookkeeping.
    """
    hop = stft_config.hop if stft_config is not None else 320
    if batch_size < 1:
        raise DataError("batch_size must be positive")
    examples = []
    for rec in records:
        examples.extend(segment_record(rec, segment_samples, hop=hop))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(examples))
        examples = [examples[i] for i in order]

    batches = []
    for i in range(0, len(examples), batch_size):
        chunk = examples[i:i + batch_size]
        batches.append({
            "mixture": torch.from_numpy(np.stack([e["mixture"] for e in chunk])),
            "vocals": torch.from_numpy(np.stack([e["vocals"] for e in chunk])),
            "target": torch.from_numpy(np.stack([e["target"] for e in chunk])),
            "valid_samples": torch.tensor([e["valid_samples"] for e in chunk], dtype=torch.int64),
            "valid_frames": torch.tensor([e["valid_frames"] for e in chunk], dtype=torch.int64),
            "song_ids": [e["song_id"] for e in chunk],
            "segment_indices": [e["segment_index"] for e in chunk],
        })
    if not batches:
        raise DataError("no examples produced from records")
    return batches
